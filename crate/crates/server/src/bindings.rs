use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use teamcook::env::Layout;
use teamcook::eval::{Controller, PassingPlan};
use teamcook::predictor::TrajectoryPredictor;
use teamcook::trainer::PolicyNet;

use crate::{SessionError, SlotBinding};

/// Read-only checkpoints shared by every session, loaded once per path.
#[derive(Debug)]
pub struct CheckpointStore {
    root: PathBuf,
    policies: Mutex<HashMap<PathBuf, Arc<PolicyNet>>>,
    predictors: Mutex<HashMap<PathBuf, Arc<TrajectoryPredictor>>>,
}

impl CheckpointStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CheckpointStore {
            root: root.into(),
            policies: Mutex::default(),
            predictors: Mutex::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve(&self, rel: &str) -> Result<PathBuf, SessionError> {
        let p = Path::new(rel);
        if rel.is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(SessionError::EscapingPath(rel.into()));
        }
        let full = self.root.join(p);
        if !full.is_file() {
            return Err(SessionError::MissingCheckpoint(full));
        }
        Ok(full)
    }

    pub fn policy(&self, rel: &str) -> Result<Arc<PolicyNet>, SessionError> {
        let path = self.resolve(rel)?;
        let mut cache = self.policies.lock().expect("checkpoint cache poisoned");
        if let Some(p) = cache.get(&path) {
            return Ok(Arc::clone(p));
        }
        let net = Arc::new(PolicyNet::load(&path)?.0);
        cache.insert(path, Arc::clone(&net));
        Ok(net)
    }

    pub fn predictor(&self, rel: &str) -> Result<Arc<TrajectoryPredictor>, SessionError> {
        let path = self.resolve(rel)?;
        let mut cache = self.predictors.lock().expect("checkpoint cache poisoned");
        if let Some(p) = cache.get(&path) {
            return Ok(Arc::clone(p));
        }
        let model = Arc::new(TrajectoryPredictor::load(&path)?.0);
        cache.insert(path, Arc::clone(&model));
        Ok(model)
    }

    /// Parse one slot binding: `human`, `random`, `stay`, `scripted:passing`,
    /// `policy:<ckpt>` or `conditioned:<ckpt>@<predictor ckpt>`, with
    /// checkpoint paths relative to the store root.
    pub fn binding(&self, spec: &str, layout: &Layout, n: usize) -> Result<SlotBinding, SessionError> {
        let machine = |c| Ok(SlotBinding::Machine(c));
        match spec.split_once(':') {
            None => match spec {
                "human" => Ok(SlotBinding::Human),
                "random" => machine(Controller::Random),
                "stay" => machine(Controller::Stay),
                _ => Err(SessionError::UnknownBinding(spec.into())),
            },
            Some(("scripted", "passing")) => machine(Controller::Passing(Arc::new(PassingPlan::new(layout, n)?))),
            Some(("policy", rel)) => machine(Controller::Policy {
                label: rel.into(),
                net: self.policy(rel)?,
            }),
            Some(("conditioned", rest)) => {
                let (policy, predictor) = rest
                    .split_once('@')
                    .ok_or_else(|| SessionError::UnknownBinding(spec.into()))?;
                machine(Controller::Conditioned {
                    label: policy.into(),
                    net: self.policy(policy)?,
                    predictor: self.predictor(predictor)?,
                })
            }
            Some(_) => Err(SessionError::UnknownBinding(spec.into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net(width: usize) -> PolicyNet {
        PolicyNet::new(width, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn parses_bindings_and_caches_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let layout = teamcook::env::shipped_layout("pl-2").unwrap();
        let w = teamcook::env::observation_width(&layout, 2);
        net(w).save(&dir.path().join("a.ckpt"), serde_json::json!({})).unwrap();
        let store = CheckpointStore::new(dir.path());
        assert!(matches!(store.binding("human", &layout, 2).unwrap(), SlotBinding::Human));
        assert!(matches!(
            store.binding("scripted:passing", &layout, 2).unwrap(),
            SlotBinding::Machine(Controller::Passing(_))
        ));
        let a = store.policy("a.ckpt").unwrap();
        assert!(Arc::ptr_eq(&a, &store.policy("a.ckpt").unwrap()));
        let missing = store.binding("policy:nope.ckpt", &layout, 2).unwrap_err();
        assert!(missing.to_string().contains("nope.ckpt"), "{missing}");
        assert!(matches!(store.binding("policy:../a.ckpt", &layout, 2), Err(SessionError::EscapingPath(_))));
        assert!(matches!(store.binding("robot", &layout, 2), Err(SessionError::UnknownBinding(_))));
    }
}
