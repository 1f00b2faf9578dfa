//! Shipped task kinds.
//!
//! `sense_aggregate` params: `sensor` (temp1, temp2 or pressure),
//! `delta_interval` ms between samples (default 1000), `window` samples per
//! mean (default 10), `threshold` minimum change of the mean before it is
//! propagated again (default 0), optional `windows` cap on the number of
//! means produced, and `stats` to attach min/max/variance.
//!
//! `counter_bump` raises this node's entry of `result/<task>/count` to
//! `amount` (default 1). `set_collect` adds this node's id to
//! `result/<task>/nodes`.

use crate::aggregation::{mean_element, AggWindow, ChangeFilter};
use crate::crdt::{CrdtState, CrdtType, Delta, GCounter, MutatorOp};
use crate::runtime::{derive_rng, Millis, NodeEvent, Outbox, Timer};
use crate::sim::sensor::{SensorKind, SensorStream};
use crate::store::{Store, StoreKey};

use super::{result_key, NodeEnv, Params, Scalar, TaskContext, TaskSpec};

fn get_u64(params: &Params, key: &str, default: u64) -> Result<u64, String> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| format!("param {key} must be a non-negative integer")),
    }
}

fn get_f64(params: &Params, key: &str, default: f64) -> Result<f64, String> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| format!("param {key} must be a number")),
    }
}

pub fn validate_none(_: &Params) -> Result<(), String> {
    Ok(())
}

pub fn validate_counter_bump(params: &Params) -> Result<(), String> {
    if get_u64(params, "amount", 1)? == 0 {
        return Err("param amount must be >= 1".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct SenseParams {
    sensor: SensorKind,
    delta_interval: Millis,
    window: usize,
    threshold: f64,
    windows: Option<u64>,
    stats: bool,
}

fn sense_params(params: &Params) -> Result<SenseParams, String> {
    let sensor = params
        .get("sensor")
        .and_then(Scalar::as_str)
        .ok_or("param sensor is required")?
        .parse()?;
    let delta_interval = get_u64(params, "delta_interval", 1000)?;
    let window = get_u64(params, "window", 10)?;
    let threshold = get_f64(params, "threshold", 0.0)?;
    let windows = params
        .get("windows")
        .map(|v| v.as_u64().ok_or("param windows must be a non-negative integer"))
        .transpose()?;
    let stats = match params.get("stats") {
        None => false,
        Some(v) => v.as_bool().ok_or("param stats must be a boolean")?,
    };
    if delta_interval == 0 {
        return Err("param delta_interval must be >= 1".into());
    }
    if window == 0 {
        return Err("param window must be >= 1".into());
    }
    if threshold < 0.0 {
        return Err("param threshold must be >= 0".into());
    }
    if windows == Some(0) {
        return Err("param windows must be >= 1".into());
    }
    Ok(SenseParams {
        sensor,
        delta_interval,
        window: window as usize,
        threshold,
        windows,
        stats,
    })
}

pub fn validate_sense_aggregate(params: &Params) -> Result<(), String> {
    sense_params(params).map(|_| ())
}

/// A running sensing loop installed by `sense_aggregate`.
#[derive(Debug, Clone)]
pub struct SensePipeline {
    task: String,
    params: SenseParams,
    window: AggWindow,
    filter: ChangeFilter,
    stream: SensorStream,
    next_tick: Millis,
    finished: bool,
}

impl SensePipeline {
    pub fn key(&self) -> &StoreKey {
        self.window.key()
    }

    pub fn windows_flushed(&self) -> u64 {
        self.window.windows_flushed()
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub(super) fn tick(
        &mut self,
        env: &NodeEnv,
        now: Millis,
        store: &mut Store,
        deltas: &mut Vec<(StoreKey, Delta)>,
        out: &mut Outbox,
    ) {
        if self.finished || now != self.next_tick {
            // superseded timer chain
            return;
        }
        let value = self.stream.next_sample();
        let flushed = self
            .window
            .record_sample(value, now)
            .expect("sensor streams are finite");
        if let Some(f) = flushed {
            let propagated = self.filter.admit(f.mean);
            if propagated {
                let elem = mean_element(env.node, env.epoch, &f);
                let (_, d) = store
                    .update(self.window.key(), &MutatorOp::Add(elem), env.actor)
                    .expect("means key is a grow-only set");
                deltas.push((self.window.key().clone(), d));
            }
            out.event(NodeEvent::MeanFlushed {
                task: self.task.clone(),
                window: f.window,
                mean: f.mean,
                samples: f.samples.iter().map(|s| s.value).collect(),
                propagated,
            });
            if self.params.windows.is_some_and(|w| self.window.windows_flushed() >= w) {
                self.finished = true;
                return;
            }
        }
        self.next_tick = now + self.params.delta_interval;
        out.timer(self.params.delta_interval, Timer::SenseTick(self.task.clone()));
    }
}

/// Seed domain for a node's sensor of `kind` in a given incarnation.
pub fn sensor_stream(env: &NodeEnv, kind: SensorKind) -> SensorStream {
    let rng = derive_rng(env.seed, &[0x5e45, env.node.raw(), u64::from(env.epoch), kind.index()]);
    SensorStream::new(kind, env.sensors.amplitude(kind), rng)
}

pub fn sense_aggregate(ctx: &mut TaskContext<'_>, spec: &TaskSpec) -> Result<(), String> {
    let params = sense_params(&spec.params)?;
    if ctx.pipelines.get(&spec.name).is_some_and(|p| p.params == params) {
        // already sensing with these parameters
        return Ok(());
    }
    let key = result_key(&spec.name, "means", CrdtType::GSet);
    ctx.store.declare(&key).map_err(|e| e.to_string())?;
    let window = AggWindow::new(key, params.window, params.delta_interval)
        .map_err(|e| e.to_string())?
        .with_stats(params.stats);
    let pipeline = SensePipeline {
        task: spec.name.clone(),
        window,
        filter: ChangeFilter::new(params.threshold),
        stream: sensor_stream(ctx.env, params.sensor),
        next_tick: ctx.now + params.delta_interval,
        finished: false,
        params,
    };
    ctx.out
        .timer(pipeline.params.delta_interval, Timer::SenseTick(spec.name.clone()));
    ctx.pipelines.insert(spec.name.clone(), pipeline);
    Ok(())
}

pub fn counter_bump(ctx: &mut TaskContext<'_>, spec: &TaskSpec) -> Result<(), String> {
    let amount = get_u64(&spec.params, "amount", 1)?;
    let key = result_key(&spec.name, "count", CrdtType::GCounter);
    // keyed by the stable node id, so a re-run after restart cannot add twice
    let delta = GCounter::from_entries([(ctx.env.node, amount)]);
    ctx.join(&key, CrdtState::GCounter(delta))?;
    Ok(())
}

pub fn set_collect(ctx: &mut TaskContext<'_>, spec: &TaskSpec) -> Result<(), String> {
    let key = result_key(&spec.name, "nodes", CrdtType::AWSet);
    let elem = ctx.env.node.raw().to_string().into_bytes();
    let present = matches!(ctx.store.get(&key), Some(CrdtState::AWSet(s)) if s.contains(&elem));
    if !present {
        ctx.update(&key, &MutatorOp::Add(elem))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crdt::{NodeId, QueryResult};
    use crate::sim::sensor::SensorConfig;
    use crate::task::{add_task, SchedulerConfig, TaskRegistry, TaskRuntime, Targets};

    fn env(node: u64) -> NodeEnv {
        NodeEnv {
            node: NodeId(node),
            actor: NodeId(node),
            epoch: 0,
            seed: 3,
            sensors: SensorConfig::default(),
        }
    }

    fn runtime() -> TaskRuntime {
        TaskRuntime::new(TaskRegistry::standard(), SchedulerConfig::default(), derive_rng(0, &[]))
    }

    fn sense(windows: i64) -> TaskSpec {
        TaskSpec::new("s", Targets::All, "sense_aggregate")
            .param("sensor", Scalar::Str("temp2".into()))
            .param("delta_interval", Scalar::Int(100))
            .param("window", Scalar::Int(4))
            .param("windows", Scalar::Int(windows))
    }

    /// Drives sense ticks the way the node runtime would.
    fn drive(rt: &mut TaskRuntime, env: &NodeEnv, store: &mut Store, mut out: Outbox, until: Millis) -> Vec<NodeEvent> {
        let mut events = std::mem::take(&mut out.events);
        let mut timers: Vec<(Millis, Timer)> = out.timers.drain(..).collect();
        while let Some(pos) = timers.iter().position(|(at, _)| *at <= until) {
            let (at, timer) = timers.remove(pos);
            let Timer::SenseTick(task) = timer else { continue };
            let mut o = Outbox::new();
            rt.on_sense_tick(env, at, store, &mut Vec::new(), &mut o, &task);
            timers.extend(o.timers.into_iter().map(|(d, t)| (at + d, t)));
            events.extend(o.events);
        }
        events
    }

    #[test]
    fn sense_aggregate_produces_capped_means() {
        let mut store = Store::new();
        add_task(&mut store, NodeId(1), &sense(3)).unwrap();
        let mut rt = runtime();
        let e = env(1);
        let mut out = Outbox::new();
        assert!(rt.start_task(&e, 0, &mut store, &mut Vec::new(), &mut out, "s").executed());
        let events = drive(&mut rt, &e, &mut store, out, 10_000);
        let means: Vec<(f64, Vec<f64>)> = events
            .iter()
            .filter_map(|ev| match ev {
                NodeEvent::MeanFlushed { mean, samples, .. } => Some((*mean, samples.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(means.len(), 3);
        let expected: Vec<f64> = sensor_stream(&e, SensorKind::Temp2).take(12).collect();
        for (i, (mean, samples)) in means.iter().enumerate() {
            assert_eq!(samples, &expected[i * 4..i * 4 + 4]);
            let brute = samples.iter().sum::<f64>() / 4.0;
            assert!((mean - brute).abs() < 1e-9);
        }
        match store.read("result/s/means", None).unwrap() {
            QueryResult::Set(s) => assert_eq!(s.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rerunning_sense_task_does_not_restart_pipeline() {
        let mut store = Store::new();
        add_task(&mut store, NodeId(1), &sense(2)).unwrap();
        let mut rt = runtime();
        let e = env(1);
        let mut out = Outbox::new();
        rt.start_task(&e, 0, &mut store, &mut Vec::new(), &mut out, "s");
        let mut again = Outbox::new();
        rt.start_task(&e, 50, &mut store, &mut Vec::new(), &mut again, "s");
        assert!(again.timers.is_empty());
    }

    #[test]
    fn bad_sense_params() {
        let p = |k: &str, v: Scalar| sense(1).param(k, v).params;
        assert!(validate_sense_aggregate(&sense(1).params).is_ok());
        assert!(validate_sense_aggregate(&p("sensor", Scalar::Str("wind".into()))).is_err());
        assert!(validate_sense_aggregate(&p("window", Scalar::Int(0))).is_err());
        assert!(validate_sense_aggregate(&p("threshold", Scalar::Float(-1.0))).is_err());
        assert!(validate_sense_aggregate(&Params::new()).is_err());
    }

    #[test]
    fn counter_bump_and_set_collect_are_idempotent() {
        let mut store = Store::new();
        add_task(
            &mut store,
            NodeId(1),
            &TaskSpec::new("c", Targets::All, "counter_bump").param("amount", Scalar::Int(3)),
        )
        .unwrap();
        add_task(&mut store, NodeId(1), &TaskSpec::new("g", Targets::All, "set_collect")).unwrap();
        let mut rt = runtime();
        for _ in 0..3 {
            for node in [1, 2] {
                rt.start_all_tasks(&env(node), 0, &mut store, &mut Vec::new(), &mut Outbox::new());
            }
        }
        assert_eq!(store.read("result/c/count", None).unwrap(), QueryResult::Counter(6));
        assert_eq!(
            store.read("result/g/nodes", None).unwrap(),
            QueryResult::Set([b"1".to_vec(), b"2".to_vec()].into())
        );
    }
}
