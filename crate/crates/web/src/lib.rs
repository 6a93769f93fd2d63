//! Browser demo: simulate the bundled 9-bus system under each mode, fit CP
//! ranks, and measure the Taylor remainder.
//!
//! Every method returns a JSON string; the page does the plotting.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use tdmor::cp::CpOptions;
use tdmor::dynamics::Dynamics;
use tdmor::power::system::{DELTA, STATES_PER_MACHINE};
use tdmor::power::{wscc9, SystemModel};
use tdmor::sim::{run_adaptive, Mode, Scenario, SwitchPolicy, Trajectory};
use tdmor::study::rms_error;
use tdmor::taylor::{compress, build_model, reduced_rhs, ModelSet, Ranks, TaylorModel};

fn js_err(e: tdmor::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    sys: SystemModel,
    model: TaylorModel,
}

#[wasm_bindgen]
impl Demo {
    /// Fixture at nominal load with CP ranks `(r2, r3)`; zero means full rank.
    #[wasm_bindgen(constructor)]
    pub fn new(r2: usize, r3: usize) -> Result<Demo, JsValue> {
        Demo::build(r2, r3).map_err(js_err)
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.model.ranks.to_vec()
    }

    /// Rotor angles of the study machines relative to the reference, for
    /// `mode` and for the full model, plus the RMS error between them.
    pub fn simulate(&self, mode: &str, fault_bus: u32, t_clear: f64, t_end: f64) -> Result<String, JsValue> {
        self.simulate_json(mode, fault_bus, t_clear, t_end).map(|v| v.to_string()).map_err(js_err)
    }

    /// Fit of the second- and third-order terms at ranks `1..=max_rank`.
    pub fn cp_fits(&self, max_rank: usize) -> Result<String, JsValue> {
        self.cp_fits_json(max_rank).map(|v| v.to_string()).map_err(js_err)
    }

    /// Norm of `f(x0 + εv) − f(x0) − reduced(εv)` on a log grid of `ε` for
    /// a random unit direction `v`.
    pub fn taylor_residual(&self, seed: u32) -> String {
        self.residual_json(seed as u64).to_string()
    }
}

impl Demo {
    pub fn build(r2: usize, r3: usize) -> tdmor::Result<Demo> {
        let sys = SystemModel::build(wscc9(), 1.0)?;
        let ranks = if r2 == 0 || r3 == 0 {
            Ranks::Full
        } else {
            Ranks::Fixed(r2, r3)
        };
        let model = build_model(&sys, ranks, &CpOptions::default())?;
        Ok(Demo { sys, model })
    }

    fn angles(&self, tr: &Trajectory, reference: usize, stride: usize) -> Vec<Vec<f64>> {
        self.sys
            .study()
            .iter()
            .map(|&g| {
                (0..tr.len())
                    .step_by(stride)
                    .map(|k| {
                        let x = tr.state(k);
                        (x[g * STATES_PER_MACHINE + DELTA] - x[reference * STATES_PER_MACHINE + DELTA]).to_degrees()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn simulate_json(&self, mode: &str, fault_bus: u32, t_clear: f64, t_end: f64) -> tdmor::Result<Value> {
        let mode: Mode = mode.parse()?;
        let set = ModelSet::new("wscc9", "", vec![self.model.clone()]);
        let scenario = Scenario::fault(fault_bus, 0.0, t_clear, t_end, 0.01);
        let policy = SwitchPolicy::new(&self.sys, mode, 1.0, &[1.0]);
        let mut full_policy = policy.clone();
        full_policy.mode = Mode::ForceFull;
        let run = run_adaptive(&self.sys, &set, &scenario, &policy)?;
        let full = run_adaptive(&self.sys, &set, &scenario, &full_policy)?;
        let stride = 5;
        let rms = if run.len() == full.len() {
            rms_error(&run, &full, self.sys.study(), policy.reference)?
        } else {
            vec![f64::NAN; self.sys.study().len()]
        };
        let generators: Vec<u32> = self.sys.study().iter().map(|&k| self.sys.data().machines[k].id).collect();
        Ok(json!({
            "times": full.times.iter().step_by(stride).collect::<Vec<_>>(),
            "generators": generators,
            "angles": self.angles(&run, policy.reference, stride),
            "full": self.angles(&full, policy.reference, stride),
            "rms": rms,
            "diverged": run.diverged,
            "switches": run.switch_log,
        }))
    }

    pub fn cp_fits_json(&self, max_rank: usize) -> tdmor::Result<Value> {
        let (t2, t3) = self
            .model
            .raw
            .as_ref()
            .ok_or_else(|| tdmor::Error::invalid("model kept no raw tensors"))?;
        let opts = CpOptions {
            restarts: 1,
            max_iters: 200,
            ..CpOptions::default()
        };
        let mut rows = Vec::new();
        for r in 1..=max_rank {
            let f2 = compress(t2, r, &opts)?.fit;
            let f3 = compress(t3, r, &opts)?.fit;
            rows.push(json!({"rank": r, "fit2": f2, "fit3": f3}));
        }
        Ok(Value::Array(rows))
    }

    pub fn residual_json(&self, seed: u64) -> Value {
        let n = self.sys.n_states();
        let f = self.sys.dynamics(self.sys.prefault_network());
        let mut f0 = vec![0.0; n];
        f.eval(self.sys.x0(), &mut f0);
        // small xorshift so the demo needs no RNG dependency
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let v: Vec<f64> = (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let points: Vec<Value> = (0..=16)
            .map(|k| {
                let eps = 10f64.powf(-3.0 + 2.5 * k as f64 / 16.0);
                let x: Vec<f64> = self.sys.x0().iter().zip(&v).map(|(a, b)| a + b / norm * eps).collect();
                let dx: Vec<f64> = x.iter().zip(self.sys.x0()).map(|(a, b)| a - b).collect();
                let mut fx = vec![0.0; n];
                f.eval(&x, &mut fx);
                let r = reduced_rhs(&self.model, &dx);
                let res = (0..n).map(|i| (fx[i] - f0[i] - r[i]).powi(2)).sum::<f64>().sqrt();
                json!({"eps": eps, "residual": res})
            })
            .collect();
        Value::Array(points)
    }
}
