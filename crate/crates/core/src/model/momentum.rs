use crate::error::{Error, Result};
use crate::params::ParamMap;

/// Query parameters and their momentum-averaged key copy.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumPair {
    pub query: ParamMap,
    pub key: ParamMap,
    momentum: f64,
}

impl MomentumPair {
    /// Key starts as an exact copy of the query.
    pub fn new(query: ParamMap, momentum: f64) -> Result<Self> {
        let key = query.clone();
        Self::from_parts(query, key, momentum)
    }

    pub fn from_parts(query: ParamMap, key: ParamMap, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Argument(format!("momentum {momentum} outside [0, 1]")));
        }
        Ok(MomentumPair {
            query,
            key,
            momentum,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// `key <- m * key + (1 - m) * query`, elementwise. Evaluated as a step
    /// towards the query so equal parameters stay bitwise unchanged.
    pub fn momentum_update(&mut self) -> Result<()> {
        if !self.key.same_schema(&self.query) {
            return Err(Error::State("key and query parameter schemas differ".into()));
        }
        let m = self.momentum;
        for ((_, k), (_, q)) in self.key.iter_mut().zip(self.query.iter()) {
            for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
                if m == 0.0 {
                    *kv = *qv;
                    continue;
                }
                let stepped = *kv + (1.0 - m) * (qv - *kv);
                *kv = stepped.clamp(kv.min(*qv), kv.max(*qv));
            }
        }
        Ok(())
    }
}
