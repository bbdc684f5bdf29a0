//! Real-time task executive.
//!
//! Maintains an asynchronous agenda of prioritized, deadline-stamped
//! inference tasks over one engine. Execution is cooperative: the engine's
//! pass machinery is stepped one node at a time, and every node boundary is
//! a preemption point where deadlines, higher-priority queries, and
//! higher-priority input data are honored.

pub mod plan;

pub use plan::{PathPlan, PlanObjective, ProofPath};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::calculus::UncertaintyInterval;
use crate::compile::timing::TimingTable;
use crate::engine::{Engine, EngineError, INode, PassFilter, StepOutcome, Validity};
use crate::kb::{ClassPath, GroundWff, ModelError};

// --- time ------------------------------------------------------------------

/// Injectable time source, in microseconds from an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now_us(&self) -> u64;
}

/// Wall-clock time since construction.
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> SystemClock {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock::new()
    }
}

impl Clock for SystemClock {
    fn now_us(&self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }
}

/// Manually advanced time for deterministic tests.
#[derive(Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> VirtualClock {
        VirtualClock::default()
    }

    pub fn advance_us(&self, us: u64) {
        self.now.fetch_add(us, Ordering::SeqCst);
    }

    pub fn set_us(&self, us: u64) {
        self.now.store(us, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_us(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

// --- tasks -----------------------------------------------------------------

/// Executive failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("malformed task record: {0}")]
    Malformed(String),
    #[error("unknown goal wff `{0}`")]
    UnknownGoal(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What a task asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    /// Backward-chain on a goal wff under a planned budget.
    BackwardGoal(GroundWff),
    /// Forward-chain from an evidence batch.
    ForwardEvidence(Vec<(GroundWff, UncertaintyInterval)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStatus {
    Queued,
    Running,
    Done,
    Expired,
    Preempted,
    Failed,
}

impl TaskStatus {
    pub fn name(self) -> &'static str {
        match self {
            TaskStatus::Queued => "queued",
            TaskStatus::Running => "running",
            TaskStatus::Done => "done",
            TaskStatus::Expired => "expired",
            TaskStatus::Preempted => "preempted",
            TaskStatus::Failed => "failed",
        }
    }
}

/// One inference request.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: u64,
    pub kind: TaskKind,
    /// Higher is more urgent.
    pub priority: i32,
    /// Absolute clock time, µs.
    pub deadline_us: u64,
    /// Rule-class paths restricting which templates may fire; empty = all.
    pub scope: Vec<ClassPath>,
    pub status: TaskStatus,
}

/// One entry on the output stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task: u64,
    pub status: TaskStatus,
    pub goal: Option<GroundWff>,
    pub interval: Option<UncertaintyInterval>,
    pub validity: Option<Validity>,
    pub elapsed_us: u64,
    pub plan_summary: Option<String>,
    pub error: Option<String>,
}

impl TaskResult {
    /// One-line structured record for the result stream.
    pub fn to_record(&self) -> String {
        let mut out = format!("(result :task {} :status {}", self.task, self.status.name());
        if let Some(goal) = &self.goal {
            out.push_str(&format!(" :goal {goal}"));
        }
        if let Some(iv) = self.interval {
            out.push_str(&format!(" :lb {} :ub {}", iv.lb.value(), iv.ub.value()));
        }
        if let Some(v) = self.validity {
            out.push_str(&format!(" :validity {v}"));
        }
        out.push_str(&format!(" :elapsed-us {}", self.elapsed_us));
        if let Some(p) = &self.plan_summary {
            out.push_str(&format!(" :plan \"{p}\""));
        }
        if let Some(e) = &self.error {
            out.push_str(&format!(" :error \"{e}\""));
        }
        out.push(')');
        out
    }
}

/// Agenda ordering key: priority descending, deadline ascending, then
/// submission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct AgendaKey {
    neg_priority: i64,
    deadline_us: u64,
    seq: u64,
}

struct Running {
    task: Task,
    key: AgendaKey,
    started_us: u64,
    plan_summary: Option<String>,
    /// Largest single-node cost: the internal-deadline guard margin.
    margin_us: u64,
}

// --- the executive ---------------------------------------------------------

/// Single-writer executive over one engine: agenda in, result stream out.
pub struct Executive {
    engine: Engine,
    timing: TimingTable,
    clock: Arc<dyn Clock>,
    agenda: BTreeMap<AgendaKey, Task>,
    running: Option<Running>,
    results: VecDeque<TaskResult>,
    next_id: u64,
    next_seq: u64,
    objective: PlanObjective,
}

impl Executive {
    pub fn new(engine: Engine, timing: TimingTable, clock: Arc<dyn Clock>) -> Executive {
        Executive {
            engine,
            timing,
            clock,
            agenda: BTreeMap::new(),
            running: None,
            results: VecDeque::new(),
            next_id: 1,
            next_seq: 0,
            objective: PlanObjective::Coverage,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn timing(&self) -> &TimingTable {
        &self.timing
    }

    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    /// Switch planning between path-count coverage and certainty weighting.
    pub fn set_objective(&mut self, objective: PlanObjective) {
        self.objective = objective;
    }

    /// Queue a task. A deadline not in the future expires it immediately
    /// (a result record is emitted; it will never run).
    pub fn submit(
        &mut self,
        kind: TaskKind,
        priority: i32,
        deadline_us: u64,
        scope: Vec<ClassPath>,
    ) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        let task = Task {
            id,
            kind,
            priority,
            deadline_us,
            scope,
            status: TaskStatus::Queued,
        };
        if deadline_us <= self.clock.now_us() {
            self.results.push_back(TaskResult {
                task: id,
                status: TaskStatus::Expired,
                goal: task_goal(&task),
                interval: None,
                validity: None,
                elapsed_us: 0,
                plan_summary: None,
                error: Some("deadline already passed at submission".into()),
            });
            return id;
        }
        let key = AgendaKey {
            neg_priority: -(priority as i64),
            deadline_us,
            seq,
        };
        self.agenda.insert(key, task);
        id
    }

    /// Drain everything the executive has produced so far.
    pub fn take_results(&mut self) -> Vec<TaskResult> {
        self.results.drain(..).collect()
    }

    /// Tasks still queued, in execution order.
    pub fn queued(&self) -> Vec<&Task> {
        self.agenda.values().collect()
    }

    /// Run until the agenda is empty and nothing is mid-flight.
    pub fn run_until_idle(&mut self) {
        while self.pump() {}
    }

    /// Advance by one quantum: start the next task, or execute one engine
    /// node of the running task, honoring interrupts at the boundary.
    /// Returns false when there is nothing to do.
    pub fn pump(&mut self) -> bool {
        if self.running.is_none() {
            return self.start_next();
        }
        self.step_running();
        true
    }

    fn start_next(&mut self) -> bool {
        let now = self.clock.now_us();
        let Some((&key, _)) = self.agenda.iter().next() else {
            return false;
        };
        let mut task = self.agenda.remove(&key).unwrap();
        if task.deadline_us <= now {
            task.status = TaskStatus::Expired;
            self.results.push_back(TaskResult {
                task: task.id,
                status: TaskStatus::Expired,
                goal: task_goal(&task),
                interval: None,
                validity: None,
                elapsed_us: 0,
                plan_summary: None,
                error: Some("deadline passed while queued".into()),
            });
            return true;
        }
        task.status = TaskStatus::Running;
        let margin_us = self
            .timing
            .entries
            .values()
            .map(|e| e.cost_us)
            .fold(0.0, f64::max)
            .ceil() as u64;

        let started = match self.begin_task(&task, now) {
            Ok(plan_summary) => Running {
                key,
                started_us: now,
                plan_summary,
                margin_us,
                task,
            },
            Err(e) => {
                self.results.push_back(TaskResult {
                    task: task.id,
                    status: TaskStatus::Failed,
                    goal: task_goal(&task),
                    interval: None,
                    validity: None,
                    elapsed_us: self.clock.now_us().saturating_sub(now),
                    plan_summary: None,
                    error: Some(e.to_string()),
                });
                return true;
            }
        };
        self.running = Some(started);
        true
    }

    /// Set up the engine pass for a task: plan + cone filter for a goal,
    /// descendant filter for evidence.
    fn begin_task(&mut self, task: &Task, now: u64) -> Result<Option<String>, ExecError> {
        let scope_templates = self.resolve_scope(&task.scope)?;
        match &task.kind {
            TaskKind::BackwardGoal(goal) => {
                let budget = task.deadline_us.saturating_sub(now) as f64;
                let plan = plan::plan(&self.engine, &self.timing, goal, budget, self.objective)
                    .ok_or_else(|| ExecError::UnknownGoal(goal.to_string()))?;
                let summary = plan.summary();
                let filter = match scope_templates {
                    Some(scope) => PassFilter::NodesAndScope(plan.subgraph, scope),
                    None => PassFilter::Nodes(plan.subgraph),
                };
                self.engine.start_pass(filter);
                Ok(Some(summary))
            }
            TaskKind::ForwardEvidence(batch) => {
                self.engine.assert_batch(batch)?;
                let mut nodes: BTreeSet<INode> = BTreeSet::new();
                for (wff, _) in batch {
                    if let Some(wi) = self.engine.wff_slot_index(wff) {
                        nodes.extend(self.engine.descendant_cone(wi));
                    }
                }
                let filter = match scope_templates {
                    Some(scope) => PassFilter::NodesAndScope(nodes, scope),
                    None => PassFilter::Nodes(nodes),
                };
                self.engine.start_pass(filter);
                Ok(None)
            }
        }
    }

    fn resolve_scope(
        &self,
        scope: &[ClassPath],
    ) -> Result<Option<BTreeSet<String>>, ExecError> {
        if scope.is_empty() {
            return Ok(None);
        }
        let templates: BTreeSet<String> =
            self.engine.kb().scope_rules(scope)?.into_iter().collect();
        Ok(Some(templates))
    }

    fn step_running(&mut self) {
        let now = self.clock.now_us();
        let running = self.running.as_ref().unwrap();

        // External interrupts: any queued task with strictly higher
        // priority supersedes the current one at this node boundary,
        // whether it is a query (b) or fresh input data (c).
        if let Some((&key, _)) = self.agenda.iter().next() {
            if -key.neg_priority > running.task.priority as i64 {
                self.preempt_running();
                return;
            }
        }

        // Internal interrupt: the task is approaching its own deadline
        // (within one worst-case node evaluation); stop and report the
        // best-so-far answer.
        let running = self.running.as_ref().unwrap();
        if now + running.margin_us >= running.task.deadline_us {
            self.finish_running(TaskStatus::Expired);
            return;
        }

        match self.engine.step() {
            StepOutcome::Recomputed { .. } => {}
            StepOutcome::Done => self.finish_running(TaskStatus::Done),
        }
    }

    /// Halt the running task at the current boundary and re-queue it; the
    /// engine keeps every node already computed.
    fn preempt_running(&mut self) {
        let mut running = self.running.take().unwrap();
        self.engine.finish_pass();
        running.task.status = TaskStatus::Preempted;
        self.agenda.insert(running.key, running.task);
    }

    fn finish_running(&mut self, status: TaskStatus) {
        let running = self.running.take().unwrap();
        self.engine.finish_pass();
        let elapsed_us = self.clock.now_us().saturating_sub(running.started_us);
        let (goal, interval, validity) = match &running.task.kind {
            TaskKind::BackwardGoal(goal) => {
                let state = self.engine.current(goal);
                (
                    Some(goal.clone()),
                    state.map(|(iv, _)| iv),
                    state.map(|(_, v)| v),
                )
            }
            TaskKind::ForwardEvidence(_) => (None, None, None),
        };
        self.results.push_back(TaskResult {
            task: running.task.id,
            status,
            goal,
            interval,
            validity,
            elapsed_us,
            plan_summary: running.plan_summary,
            error: None,
        });
    }
}

fn task_goal(task: &Task) -> Option<GroundWff> {
    match &task.kind {
        TaskKind::BackwardGoal(goal) => Some(goal.clone()),
        TaskKind::ForwardEvidence(_) => None,
    }
}

// --- task submission records ----------------------------------------------

/// Parse one submission record against an engine's declarations.
///
/// Forms:
/// `(task :kind goal :goal (v o val) :priority P :deadline D [:scope (c ...)])`
/// `(task :kind evidence :obs ((v o val lb ub) ...) :priority P :deadline D)`
///
/// Deadlines are `+Nms` / `+Nus` relative to now, or absolute µs.
pub fn parse_task_record(
    engine: &Engine,
    now_us: u64,
    text: &str,
) -> Result<(TaskKind, i32, u64, Vec<ClassPath>), ExecError> {
    use crate::kb::sexpr;
    let bad = |msg: &str| ExecError::Malformed(msg.to_string());
    let data = sexpr::parse_all(text).map_err(|e| bad(&e.message))?;
    let [record] = data.as_slice() else {
        return Err(bad("expected exactly one (task ...) record"));
    };
    let items = record.list().ok_or_else(|| bad("expected a list"))?;
    if items.first().and_then(sexpr::Sexpr::atom) != Some("task") {
        return Err(bad("record must start with `task`"));
    }

    let mut kind_name: Option<String> = None;
    let mut goal_text: Option<String> = None;
    let mut obs: Vec<(GroundWff, UncertaintyInterval)> = Vec::new();
    let mut priority: Option<i32> = None;
    let mut deadline: Option<u64> = None;
    let mut scope: Vec<ClassPath> = Vec::new();

    let mut i = 1;
    while i < items.len() {
        let key = items[i]
            .atom()
            .ok_or_else(|| bad("expected a :keyword"))?
            .to_string();
        let value = items
            .get(i + 1)
            .ok_or_else(|| bad(&format!("{key} missing a value")))?;
        match key.as_str() {
            ":kind" => {
                kind_name = Some(
                    value
                        .atom()
                        .ok_or_else(|| bad(":kind takes an atom"))?
                        .to_string(),
                )
            }
            ":goal" => goal_text = Some(value.to_string()),
            ":obs" => {
                let entries = value.list().ok_or_else(|| bad(":obs takes a list"))?;
                for entry in entries {
                    let parts: Vec<&str> = entry
                        .list()
                        .ok_or_else(|| bad("observation must be a list"))?
                        .iter()
                        .map(|a| a.atom().ok_or_else(|| bad("nested observation")))
                        .collect::<Result<_, _>>()?;
                    let (wff_parts, bounds) = match parts.len() {
                        5 => (&parts[..3], &parts[3..]),
                        4 => (&parts[..2], &parts[2..]),
                        _ => return Err(bad("observation takes (v [o] val lb ub)")),
                    };
                    let wff_text = format!("({})", wff_parts.join(" "));
                    let wff = engine.parse_wff(&wff_text)?;
                    let lb: f64 = bounds[0].parse().map_err(|_| bad("bad lb"))?;
                    let ub: f64 = bounds[1].parse().map_err(|_| bad("bad ub"))?;
                    obs.push((
                        wff,
                        UncertaintyInterval {
                            lb: crate::calculus::Confidence::clamped(lb),
                            ub: crate::calculus::Confidence::clamped(ub),
                        },
                    ));
                }
            }
            ":priority" => {
                priority = Some(
                    value
                        .atom()
                        .and_then(|a| a.parse().ok())
                        .ok_or_else(|| bad("bad :priority"))?,
                )
            }
            ":deadline" => {
                deadline = Some(parse_deadline(
                    value.atom().ok_or_else(|| bad(":deadline takes an atom"))?,
                    now_us,
                )?)
            }
            ":scope" => {
                let entries = value.list().ok_or_else(|| bad(":scope takes a list"))?;
                for entry in entries {
                    let path = entry.atom().ok_or_else(|| bad("scope entries are atoms"))?;
                    scope.push(ClassPath::parse(path));
                }
            }
            other => return Err(bad(&format!("unknown key `{other}`"))),
        }
        i += 2;
    }

    let priority = priority.ok_or_else(|| bad("missing :priority"))?;
    let deadline = deadline.ok_or_else(|| bad("missing :deadline"))?;
    let kind = match kind_name.as_deref() {
        Some("goal") => {
            let text = goal_text.ok_or_else(|| bad("goal task missing :goal"))?;
            TaskKind::BackwardGoal(engine.parse_wff(&text)?)
        }
        Some("evidence") => {
            if obs.is_empty() {
                return Err(bad("evidence task missing :obs"));
            }
            TaskKind::ForwardEvidence(obs)
        }
        _ => return Err(bad(":kind must be goal or evidence")),
    };
    Ok((kind, priority, deadline, scope))
}

/// `+Nms`/`+Nus` relative to `now_us`, or an absolute µs count.
fn parse_deadline(text: &str, now_us: u64) -> Result<u64, ExecError> {
    let bad = || ExecError::Malformed(format!("bad deadline `{text}`"));
    if let Some(rest) = text.strip_prefix('+') {
        if let Some(n) = rest.strip_suffix("ms") {
            let v: u64 = n.parse().map_err(|_| bad())?;
            return Ok(now_us + v * 1000);
        }
        if let Some(n) = rest.strip_suffix("us") {
            let v: u64 = n.parse().map_err(|_| bad())?;
            return Ok(now_us + v);
        }
        return Err(bad());
    }
    text.parse().map_err(|_| bad())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::timing::TimingEntry;
    use crate::compile::CompiledNetwork;
    use crate::engine::PredicateRegistry;
    use crate::kb::parse_kb;

    fn engine_from(kb_text: &str) -> Engine {
        let kb = parse_kb(kb_text).expect("test KB parses");
        let net = CompiledNetwork::compile(kb).expect("test KB compiles");
        Engine::new(net, PredicateRegistry::default()).expect("engine builds")
    }

    fn w(variable: &str, value: &str) -> GroundWff {
        GroundWff {
            variable: variable.to_string(),
            object: None,
            value: value.to_string(),
        }
    }

    fn iv(lb: f64, ub: f64) -> UncertaintyInterval {
        UncertaintyInterval::from_f64(lb, ub).unwrap()
    }

    fn table(costs: &[(&str, f64)]) -> TimingTable {
        let mut entries = BTreeMap::new();
        for &(name, cost_us) in costs {
            entries.insert(
                name.to_string(),
                TimingEntry {
                    cost_us,
                    samples: 8,
                    measured: true,
                },
            );
        }
        TimingTable {
            entries,
            provenance: "fixture".to_string(),
        }
    }

    /// Goal `g` supported directly (cost 7) and twice through a shared
    /// mid-level wff (costs 2+3 and 1+3, the 3 charged once when both are
    /// taken).
    const PLAN_KB: &str = "
        (variable in1 :input)
        (variable in2 :input)
        (variable m)
        (variable g)
        (rule r1 :premises ((in1 yes)) :sufficiency 0.9 :tnorm T2 :conclusion (g yes))
        (rule rshared :premises ((in2 yes)) :sufficiency 0.8 :tnorm T2 :conclusion (m yes))
        (rule r2top :premises ((m yes)) :sufficiency 0.7 :tnorm T2 :conclusion (g yes))
        (rule r3top :premises ((m yes)) :sufficiency 0.85 :tnorm T2 :conclusion (g yes))
    ";

    fn plan_table() -> TimingTable {
        table(&[("r1", 7.0), ("rshared", 3.0), ("r2top", 2.0), ("r3top", 1.0)])
    }

    #[test]
    fn planner_enumerates_paths_with_shared_cost_counted_once() {
        let engine = engine_from(PLAN_KB);
        let p = plan::plan(
            &engine,
            &plan_table(),
            &w("g", "yes"),
            1e9,
            PlanObjective::Coverage,
        )
        .unwrap();
        assert_eq!(p.paths.len(), 3);
        // Sorted by id: r1 (cost 7), r2top+rshared (5), r3top+rshared (4).
        assert!((p.paths[0].cost_us - 7.0).abs() < 1e-12);
        assert!((p.paths[1].cost_us - 5.0).abs() < 1e-12);
        assert!((p.paths[2].cost_us - 4.0).abs() < 1e-12);
        // Everything fits; union charges rshared once: 7+2+1+3 = 13.
        assert_eq!(p.selected, vec![0, 1, 2]);
        assert!((p.estimated_cost_us - 13.0).abs() < 1e-12);
        assert!(!p.degraded);
        assert!(!p.truncated);
    }

    #[test]
    fn planner_selects_maximal_coverage_within_budget() {
        let engine = engine_from(PLAN_KB);
        let p = plan::plan(
            &engine,
            &plan_table(),
            &w("g", "yes"),
            10.0,
            PlanObjective::Coverage,
        )
        .unwrap();
        // {r2top, r3top} shares rshared: 2+1+3 = 6 <= 10; adding r1 busts it.
        assert_eq!(p.selected, vec![1, 2]);
        assert!((p.estimated_cost_us - 6.0).abs() < 1e-12);
        assert!(!p.degraded);
    }

    #[test]
    fn planner_degrades_to_cheapest_path_when_nothing_fits() {
        let engine = engine_from(PLAN_KB);
        let p = plan::plan(
            &engine,
            &plan_table(),
            &w("g", "yes"),
            3.0,
            PlanObjective::Coverage,
        )
        .unwrap();
        assert!(p.degraded);
        assert_eq!(p.selected, vec![2]);
        assert!((p.estimated_cost_us - 4.0).abs() < 1e-12);
    }

    #[test]
    fn planner_charges_nothing_for_already_clean_nodes() {
        let mut engine = engine_from(PLAN_KB);
        engine.propagate();
        let p = plan::plan(
            &engine,
            &plan_table(),
            &w("g", "yes"),
            0.0,
            PlanObjective::Coverage,
        )
        .unwrap();
        assert_eq!(p.selected, vec![0, 1, 2]);
        assert!(p.estimated_cost_us == 0.0);
        assert!(!p.degraded);
    }

    #[test]
    fn planner_path_certainty_is_min_sufficiency_along_the_chain() {
        let kb = "
            (variable leaf :input)
            (variable x)
            (variable y)
            (variable g)
            (rule ra :premises ((y yes)) :sufficiency 0.9 :tnorm T3 :conclusion (g yes))
            (rule rb :premises ((x yes)) :sufficiency 0.7 :tnorm T3 :conclusion (y yes))
            (rule rc :premises ((leaf yes)) :sufficiency 0.8 :tnorm T3 :conclusion (x yes))
        ";
        let engine = engine_from(kb);
        let p = plan::plan(
            &engine,
            &table(&[("ra", 1.0), ("rb", 1.0), ("rc", 1.0)]),
            &w("g", "yes"),
            1e9,
            PlanObjective::Certainty,
        )
        .unwrap();
        assert_eq!(p.paths.len(), 1);
        assert!((p.paths[0].certainty - 0.7).abs() < 1e-12);
    }

    #[test]
    fn certainty_objective_prefers_the_stronger_path_under_budget() {
        let kb = "
            (variable a1 :input)
            (variable a2 :input)
            (variable g)
            (rule pa :premises ((a1 yes)) :sufficiency 0.3 :tnorm T3 :conclusion (g yes))
            (rule pb :premises ((a2 yes)) :sufficiency 0.9 :tnorm T3 :conclusion (g yes))
        ";
        let engine = engine_from(kb);
        let timing = table(&[("pa", 5.0), ("pb", 5.0)]);
        // Budget fits exactly one. Coverage ties on count and takes the
        // lexicographically first id; certainty takes the stronger rule.
        let cov = plan::plan(&engine, &timing, &w("g", "yes"), 5.0, PlanObjective::Coverage)
            .unwrap();
        assert_eq!(cov.selected, vec![0]);
        let cert =
            plan::plan(&engine, &timing, &w("g", "yes"), 5.0, PlanObjective::Certainty)
                .unwrap();
        assert_eq!(cert.selected, vec![1]);
        assert!((cert.paths[1].certainty - 0.9).abs() < 1e-12);
    }

    #[test]
    fn agenda_orders_by_priority_then_deadline_then_submission() {
        let clock = Arc::new(VirtualClock::new());
        let engine = engine_from(PLAN_KB);
        let mut exec = Executive::new(engine, plan_table(), clock);
        let t1 = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 2, 100, vec![]);
        let t2 = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 1, 50, vec![]);
        let t3 = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 2, 80, vec![]);
        let t4 = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 2, 80, vec![]);
        let order: Vec<u64> = exec.queued().iter().map(|t| t.id).collect();
        // Priority first, earlier deadline next, submission order last.
        assert_eq!(order, vec![t3, t4, t1, t2]);
    }

    #[test]
    fn goal_task_runs_to_done_with_planned_subgraph() {
        let clock = Arc::new(VirtualClock::new());
        let mut engine = engine_from(PLAN_KB);
        engine.assert_evidence(&w("in2", "yes"), iv(0.9, 1.0)).unwrap();
        let mut exec = Executive::new(engine, plan_table(), clock);
        let id = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 1, 1_000_000, vec![]);
        exec.run_until_idle();
        let results = exec.take_results();
        assert_eq!(results.len(), 1);
        let r = &results[0];
        assert_eq!(r.task, id);
        assert_eq!(r.status, TaskStatus::Done);
        assert_eq!(r.goal, Some(w("g", "yes")));
        // m = 0.8*0.9 = 0.72; labels 0.7*0.72 = 0.504 and 0.85*0.72 = 0.612
        // give LB = 0.504 + 0.612 - 0.504*0.612 = 0.807552 (r1 contributes 0).
        let interval = r.interval.unwrap();
        assert!((interval.lb.value() - 0.807552).abs() < 1e-9);
        assert!((interval.ub.value() - 1.0).abs() < 1e-12);
        assert_eq!(r.validity, Some(Validity::Valid));
        assert!(r.plan_summary.as_deref().unwrap().contains("3/3 paths"));
    }

    #[test]
    fn higher_priority_arrival_preempts_and_both_finish_correctly() {
        // Reference: the same two queries run without interleaving.
        let mut reference = engine_from(PLAN_KB);
        reference
            .assert_evidence(&w("in2", "yes"), iv(0.9, 1.0))
            .unwrap();
        reference.propagate();
        let expect_g = reference.query(&w("g", "yes")).unwrap().0;
        let expect_m = reference.query(&w("m", "yes")).unwrap().0;

        let clock = Arc::new(VirtualClock::new());
        let mut engine = engine_from(PLAN_KB);
        engine.assert_evidence(&w("in2", "yes"), iv(0.9, 1.0)).unwrap();
        let mut exec = Executive::new(engine, plan_table(), clock);
        let low = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 1, 1_000_000, vec![]);
        assert!(exec.pump()); // low starts
        assert!(exec.pump()); // one node computed
        let high = exec.submit(TaskKind::BackwardGoal(w("m", "yes")), 3, 1_000_000, vec![]);
        exec.run_until_idle();
        let results = exec.take_results();
        assert_eq!(results.len(), 2);
        // The urgent query finished first even though it arrived second.
        assert_eq!(results[0].task, high);
        assert_eq!(results[0].status, TaskStatus::Done);
        assert_eq!(results[0].interval.unwrap(), expect_m);
        assert_eq!(results[1].task, low);
        assert_eq!(results[1].status, TaskStatus::Done);
        assert_eq!(results[1].interval.unwrap(), expect_g);
        assert_eq!(results[1].validity, Some(Validity::Valid));
    }

    #[test]
    fn approaching_deadline_stops_the_task_with_best_so_far() {
        let clock = Arc::new(VirtualClock::new());
        let mut engine = engine_from(PLAN_KB);
        engine.assert_evidence(&w("in2", "yes"), iv(0.9, 1.0)).unwrap();
        let mut exec = Executive::new(engine, plan_table(), Arc::clone(&clock) as _);
        // Margin is the worst single node (7us); deadline 20us.
        let id = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 1, 20, vec![]);
        assert!(exec.pump()); // starts
        assert!(exec.pump()); // 0 + 7 < 20: one node runs
        clock.advance_us(15); // now 15: 15 + 7 >= 20
        assert!(exec.pump());
        let results = exec.take_results();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].task, id);
        assert_eq!(results[0].status, TaskStatus::Expired);
        // A best-so-far answer is still reported.
        assert!(results[0].interval.is_some());
        assert!(exec.queued().is_empty());
        assert!(!exec.pump());
    }

    #[test]
    fn forward_evidence_task_updates_the_descendant_cone() {
        let clock = Arc::new(VirtualClock::new());
        let mut engine = engine_from(PLAN_KB);
        engine.propagate(); // settle the initial all-dirty state
        let mut exec = Executive::new(engine, plan_table(), clock);
        let id = exec.submit(
            TaskKind::ForwardEvidence(vec![(w("in2", "yes"), iv(0.9, 1.0))]),
            2,
            1_000_000,
            vec![],
        );
        exec.run_until_idle();
        let results = exec.take_results();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].task, id);
        assert_eq!(results[0].status, TaskStatus::Done);
        let (m, mv) = exec.engine().current(&w("m", "yes")).unwrap();
        assert!((m.lb.value() - 0.72).abs() < 1e-9);
        assert_eq!(mv, Validity::Valid);
        let (g, gv) = exec.engine().current(&w("g", "yes")).unwrap();
        assert!((g.lb.value() - 0.807552).abs() < 1e-9);
        assert_eq!(gv, Validity::Valid);
    }

    #[test]
    fn past_deadline_submission_expires_immediately() {
        let clock = Arc::new(VirtualClock::new());
        clock.set_us(100);
        let engine = engine_from(PLAN_KB);
        let mut exec = Executive::new(engine, plan_table(), Arc::clone(&clock) as _);
        let id = exec.submit(TaskKind::BackwardGoal(w("g", "yes")), 5, 100, vec![]);
        assert!(exec.queued().is_empty());
        let results = exec.take_results();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].task, id);
        assert_eq!(results[0].status, TaskStatus::Expired);
        assert!(results[0].error.as_deref().unwrap().contains("deadline"));
    }

    #[test]
    fn unknown_goal_fails_the_task_not_the_executive() {
        let clock = Arc::new(VirtualClock::new());
        let engine = engine_from(PLAN_KB);
        let mut exec = Executive::new(engine, plan_table(), clock);
        let id = exec.submit(TaskKind::BackwardGoal(w("nope", "yes")), 1, 1_000, vec![]);
        exec.run_until_idle();
        let results = exec.take_results();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].task, id);
        assert_eq!(results[0].status, TaskStatus::Failed);
        assert!(results[0].error.is_some());
    }

    #[test]
    fn task_records_parse_goal_evidence_and_deadline_forms() {
        let engine = engine_from(PLAN_KB);
        let (kind, priority, deadline, scope) = parse_task_record(
            &engine,
            1_000,
            "(task :kind goal :goal (g yes) :priority 3 :deadline +5ms)",
        )
        .unwrap();
        assert_eq!(kind, TaskKind::BackwardGoal(w("g", "yes")));
        assert_eq!(priority, 3);
        assert_eq!(deadline, 6_000);
        assert!(scope.is_empty());

        let (kind, _, deadline, scope) = parse_task_record(
            &engine,
            1_000,
            "(task :kind evidence :obs ((in2 yes 0.9 1.0)) :priority 2 :deadline +250us :scope (/))",
        )
        .unwrap();
        assert_eq!(
            kind,
            TaskKind::ForwardEvidence(vec![(w("in2", "yes"), iv(0.9, 1.0))])
        );
        assert_eq!(deadline, 1_250);
        assert_eq!(scope, vec![ClassPath::root()]);

        let (_, _, deadline, _) = parse_task_record(
            &engine,
            1_000,
            "(task :kind goal :goal (g yes) :priority 1 :deadline 777)",
        )
        .unwrap();
        assert_eq!(deadline, 777);

        assert!(matches!(
            parse_task_record(&engine, 0, "(task :kind goal :goal (g yes) :deadline +1ms)"),
            Err(ExecError::Malformed(_))
        ));
        assert!(matches!(
            parse_task_record(&engine, 0, "(task :kind wat :priority 1 :deadline +1ms)"),
            Err(ExecError::Malformed(_))
        ));
    }

    #[test]
    fn result_records_carry_status_goal_and_interval() {
        let record = TaskResult {
            task: 7,
            status: TaskStatus::Done,
            goal: Some(w("g", "yes")),
            interval: Some(iv(0.5, 1.0)),
            validity: Some(Validity::Valid),
            elapsed_us: 42,
            plan_summary: Some("2/3 paths cost 6us budget 10us".to_string()),
            error: None,
        }
        .to_record();
        assert!(record.starts_with("(result :task 7 :status done"));
        assert!(record.contains(":goal (g yes)"));
        assert!(record.contains(":lb 0.5 :ub 1"));
        assert!(record.contains(":validity valid"));
        assert!(record.contains(":elapsed-us 42"));
        assert!(record.contains(":plan \"2/3 paths"));
    }
}
