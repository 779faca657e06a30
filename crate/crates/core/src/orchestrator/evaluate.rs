use std::collections::BTreeMap;
use std::path::PathBuf;

use super::rundir::{RunDir, RECORD_FILE};
use super::{JobRecord, OrchestratorError};
use crate::artifact::ImageStore;
use crate::backends::{ClassifyRequest, EmbedRequest, ImageRef, ModelBackends};
use crate::metrics::{clip_i, emo_s, is_shifted, lpips_diversity, sem_d, MetricReport, SampleMetrics, SetMetrics};

/// Scores the accepted outputs of completed runs. Per-output metrics are
/// computed against the run's source image; set metrics (Sem-D, LPIPS)
/// group outputs that share a source image, across runs. Groups with a
/// single output have no set metrics. Runs with an out-of-domain target
/// are counted as excluded.
pub fn evaluate_runs(
    run_dirs: &[PathBuf],
    backends: &dyn ModelBackends,
) -> Result<MetricReport, OrchestratorError> {
    let mut samples = Vec::new();
    let mut groups: BTreeMap<String, (Vec<Vec<f64>>, Vec<ImageRef>)> = BTreeMap::new();
    let mut excluded = 0usize;

    for dir in run_dirs {
        let run = RunDir::new(dir);
        run.verify(false)?;
        let record: JobRecord = run.read_json(RECORD_FILE)?;
        let Some(target) = record.spec.target_emotion.in_domain() else {
            excluded += record.outputs.len();
            continue;
        };
        if record.outputs.is_empty() {
            continue;
        }
        let store = ImageStore::new(dir);
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let src = ImageRef::from_artifact(&store, &record.source);
        let src_dist = backends
            .classify(&ClassifyRequest { image: src.clone() })?
            .distribution();
        let src_emb = backends.embed(&EmbedRequest::image(src))?.vector;

        for out in &record.outputs {
            let img = ImageRef::from_artifact(&store, &out.image);
            let dist = backends
                .classify(&ClassifyRequest { image: img.clone() })?
                .distribution();
            let emb = backends.embed(&EmbedRequest::image(img.clone()))?.vector;
            samples.push(SampleMetrics {
                run: name.clone(),
                branch: out.branch,
                clip_i: clip_i(&src_emb, &emb)?,
                emo_a: f64::from(u8::from(dist.argmax() == target)),
                emo_s: emo_s(&src_dist, &dist, target),
                shifted: f64::from(u8::from(is_shifted(&src_dist, &dist, target)?)),
            });
            let g = groups.entry(record.source.content_hash.clone()).or_default();
            g.0.push(emb);
            g.1.push(img);
        }
    }

    let mut sets = Vec::new();
    for (hash, (embs, imgs)) in groups {
        if embs.len() < 2 {
            continue;
        }
        sets.push(SetMetrics {
            source_hash: hash,
            outputs: embs.len(),
            sem_d: sem_d(&embs)?,
            lpips: Some(lpips_diversity(&imgs, backends)?),
        });
    }
    Ok(MetricReport::from_parts(samples, sets, excluded))
}
