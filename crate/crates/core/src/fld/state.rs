use std::collections::BTreeMap;

use crate::error::{shape_err, FldError, Result};
use crate::numerics::{BatchNorm1d, DenseArray, Param};

/// Named arrays that fully describe a model's learned state (parameters
/// plus normalization buffers).
pub trait StateDict: Clone {
    fn state_slots(&mut self) -> Vec<(String, &mut DenseArray)>;

    fn state_arrays(&self) -> Vec<(String, DenseArray)> {
        let mut m = self.clone();
        m.state_slots()
            .into_iter()
            .map(|(n, a)| (n, a.clone()))
            .collect()
    }

    /// Replaces every slot by name. Unknown and missing names are errors.
    fn load_state(&mut self, arrays: Vec<(String, DenseArray)>) -> Result<()> {
        let mut map: BTreeMap<String, DenseArray> = BTreeMap::new();
        for (name, a) in arrays {
            map.insert(name, a);
        }
        let mut slots = self.state_slots();
        for (name, _) in &slots {
            if !map.contains_key(name) {
                return Err(FldError::MissingArray(name.clone()));
            }
        }
        if let Some(extra) = map.keys().find(|k| !slots.iter().any(|(n, _)| n == *k)) {
            return Err(FldError::UnknownArray(extra.clone()));
        }
        for (name, slot) in slots.iter_mut() {
            let a = map.remove(name.as_str()).expect("checked above");
            if a.shape() != slot.shape() {
                return shape_err(format!(
                    "array `{name}` has shape {:?}, model expects {:?}",
                    a.shape(),
                    slot.shape()
                ));
            }
            **slot = a;
        }
        Ok(())
    }
}

pub(crate) fn push_param<'a>(out: &mut Vec<(String, &'a mut DenseArray)>, p: &'a mut Param) {
    out.push((p.name.clone(), &mut p.value));
}

pub(crate) fn push_bn<'a>(out: &mut Vec<(String, &'a mut DenseArray)>, bn: &'a mut BatchNorm1d) {
    let base = bn.gamma.name.trim_end_matches(".gamma").to_string();
    out.push((bn.gamma.name.clone(), &mut bn.gamma.value));
    out.push((bn.beta.name.clone(), &mut bn.beta.value));
    out.push((format!("{base}.running_mean"), &mut bn.running_mean));
    out.push((format!("{base}.running_var"), &mut bn.running_var));
}
