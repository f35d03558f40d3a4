use serde::Serialize;
use wasm_bindgen::prelude::*;

use crate::Lab;

fn js<T: Serialize>(r: coherence_core::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct DemoLab {
    lab: Lab,
    summary: String,
}

#[wasm_bindgen]
impl DemoLab {
    /// Trains a ranker; `summary()` holds the loss curve and PRA as JSON.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_docs: usize, epochs: usize) -> Result<DemoLab, JsError> {
        let (lab, summary) = Lab::train(seed.into(), n_docs, epochs, |_, _| {})
            .map_err(|e| JsError::new(&e.to_string()))?;
        let summary = serde_json::to_string(&summary).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(DemoLab { lab, summary })
    }

    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    pub fn score(&self, text: &str) -> Result<String, JsError> {
        js(self.lab.score(text))
    }

    pub fn attention(&self, text: &str, layer: usize, head: usize) -> Result<String, JsError> {
        js(self.lab.attention(text, layer, head))
    }
}

#[wasm_bindgen]
pub fn f_beta(tp: usize, fp: usize, fn_: usize, tn: usize, beta: f64) -> Result<String, JsError> {
    js(crate::f_beta_counts(tp, fp, fn_, tn, beta))
}
