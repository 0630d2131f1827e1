use std::path::Path;

use super::{
    mirror_gaze, synth_gaze, FeatureBundle, FeatureConfig, FeatureKind, FeatureStore, FeatureStoreWriter, RecordKey,
    SemanticTable, SyntheticFeatures, GAZE_CELLS,
};
use crate::data::Video;
use crate::error::{Error, Result};
use crate::geometry::spatial_mask;

#[derive(Debug, Clone)]
enum Backend {
    Synthetic(SyntheticFeatures),
    Store(FeatureStore),
}

/// Feature lookups keyed by video, keyframe position and track ids.
///
/// Visual vectors do not change under horizontal flipping (no image is
/// available to re-extract them); masks and gaze maps are mirrored.
#[derive(Debug, Clone)]
pub struct FeatureSource {
    backend: Backend,
    semantic: SemanticTable,
    config: FeatureConfig,
}

impl FeatureSource {
    pub fn synthetic(config: &FeatureConfig, n_classes: usize) -> Self {
        Self {
            backend: Backend::Synthetic(SyntheticFeatures::new(config.clone())),
            semantic: SemanticTable::seeded(n_classes, config.semantic_dim, config.seed),
            config: config.clone(),
        }
    }

    /// Serve features from a store. Its dimensions override those in `config`.
    pub fn from_store(store: FeatureStore, n_classes: usize, config: &FeatureConfig) -> Result<Self> {
        let d = store.dims();
        if d[0] != d[1] || d[0] != d[2] {
            return Err(Error::Dimension(format!("visual record lengths differ: {:?}", &d[..3])));
        }
        if store.dim(FeatureKind::Gaze) != GAZE_CELLS {
            return Err(Error::Dimension(format!(
                "gaze records hold {} values, expected {GAZE_CELLS}",
                d[4]
            )));
        }
        let semantic = SemanticTable::from_store(&store, n_classes)?;
        let config = FeatureConfig {
            visual_dim: d[0] as usize,
            semantic_dim: d[3] as usize,
            ..config.clone()
        };
        Ok(Self {
            backend: Backend::Store(store),
            semantic,
            config,
        })
    }

    pub fn open_store(path: impl AsRef<Path>, n_classes: usize, config: &FeatureConfig) -> Result<Self> {
        Self::from_store(FeatureStore::open(path)?, n_classes, config)
    }

    pub fn visual_dim(&self) -> usize {
        self.config.visual_dim
    }

    pub fn semantic_dim(&self) -> usize {
        self.config.semantic_dim
    }

    pub fn subject(&self, video: &Video, pos: usize, track: u32) -> Result<Vec<f64>> {
        let t = video.frame(pos).t;
        match &self.backend {
            Backend::Synthetic(s) => Ok(s.visual(track, video.class_of(track), t)),
            Backend::Store(s) => s.require(&RecordKey::subject(video.id, t, track)),
        }
    }

    pub fn object(&self, video: &Video, pos: usize, track: u32) -> Result<Vec<f64>> {
        let t = video.frame(pos).t;
        match &self.backend {
            Backend::Synthetic(s) => Ok(s.visual(track, video.class_of(track), t)),
            Backend::Store(s) => s.require(&RecordKey::object(video.id, t, track)),
        }
    }

    pub fn relation(&self, video: &Video, pos: usize, human: u32, object: u32) -> Result<Vec<f64>> {
        let t = video.frame(pos).t;
        match &self.backend {
            Backend::Synthetic(s) => Ok(s.relation(
                (human, video.class_of(human)),
                (object, video.class_of(object)),
                t,
            )),
            Backend::Store(s) => s.require(&RecordKey::relation(video.id, t, human, object)),
        }
    }

    pub fn semantic(&self, class_id: usize) -> Result<&[f64]> {
        self.semantic.get(class_id)
    }

    pub fn gaze(&self, video: &Video, pos: usize, human: u32, flipped: bool) -> Result<Vec<f64>> {
        let frame = video.frame(pos);
        let map = match &self.backend {
            Backend::Synthetic(_) => {
                let target = frame.gaze_targets.get(&human).copied().flatten();
                synth_gaze(
                    target,
                    (video.width, video.height),
                    self.config.gaze_sigma,
                    self.config.gaze_peak,
                )
            }
            Backend::Store(s) => s.require(&RecordKey::gaze(video.id, frame.t, human))?,
        };
        Ok(if flipped { mirror_gaze(&map) } else { map })
    }

    pub fn bundle(&self, video: &Video, pos: usize, human: u32, object: u32, flipped: bool) -> Result<FeatureBundle> {
        let f = video.frame(pos);
        let missing = |id| Error::Integrity(format!("track {id} not visible at t={}", f.t));
        let mut hb = f.box_of(human).ok_or_else(|| missing(human))?;
        let mut ob = f.box_of(object).ok_or_else(|| missing(object))?;
        if flipped {
            hb = hb.flip_horizontal(video.width);
            ob = ob.flip_horizontal(video.width);
        }
        Ok(FeatureBundle {
            v_s: self.subject(video, pos, human)?,
            v_o: self.object(video, pos, object)?,
            v_rel: self.relation(video, pos, human, object)?,
            mask: spatial_mask(&hb, &ob),
            semantic: self.semantic(video.class_of(object))?.to_vec(),
            gaze: self.gaze(video, pos, human, flipped)?,
        })
    }

    /// Export every feature the model can request for `videos`.
    pub fn export(&self, videos: &[Video]) -> Result<FeatureStoreWriter> {
        let (v, s) = (self.visual_dim() as u32, self.semantic_dim() as u32);
        let mut w = FeatureStoreWriter::new([v, v, v, s, GAZE_CELLS as u32]);
        for (c, row) in self.semantic.rows().iter().enumerate() {
            w.push(RecordKey::semantic(c as u32), row)?;
        }
        for video in videos {
            for pos in 0..video.len() {
                let t = video.frame(pos).t;
                for h in video.humans_at(pos) {
                    w.push(RecordKey::subject(video.id, t, h), &self.subject(video, pos, h)?)?;
                    w.push(RecordKey::gaze(video.id, t, h), &self.gaze(video, pos, h, false)?)?;
                }
                for &(id, _) in &video.frame(pos).entities {
                    w.push(RecordKey::object(video.id, t, id), &self.object(video, pos, id)?)?;
                }
                for (h, o) in video.candidate_pairs(pos) {
                    w.push(RecordKey::relation(video.id, t, h, o), &self.relation(video, pos, h, o)?)?;
                }
            }
        }
        Ok(w)
    }
}
