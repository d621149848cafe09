//! Expert demonstration recording, action masking, and persistence.
//!
//! Masking keeps an exact count of `round((1−η)·n)` actions per
//! trajectory, so the incompleteness ratio is a testable property rather
//! than a Bernoulli expectation. States, rewards, ordering and surviving
//! action values are never altered.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{Action, Env};
use crate::error::{AgailError, Result};
use crate::policy::StochasticPolicy;
use crate::rng::{sub_rng, Stream};

/// One complete episode rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// State after the last step; the bootstrap point when the episode
    /// was cut off by the horizon rather than by termination.
    pub final_state: Vec<f64>,
    pub terminated: bool,
}

/// A trajectory whose action slots may be masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoTrajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Option<Action>>,
    pub rewards: Vec<f64>,
}

/// Expert state trajectories plus partially masked action trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteDemoSet {
    pub env_name: String,
    pub eta: f64,
    pub source_seed: u64,
    pub trajectories: Vec<DemoTrajectory>,
}

/// Runs one episode with stochastic policy sampling, ending at the env's
/// done flag or horizon.
pub fn run_episode(
    policy: &StochasticPolicy,
    env: &dyn Env,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut s = env.reset(rng);
    let mut terminated = false;
    for _ in 0..env.spec().horizon {
        let (a, _) = policy.act(&s, rng)?;
        let r = env.step(&s, &a)?;
        states.push(s);
        actions.push(a);
        rewards.push(r.reward);
        s = r.next_state;
        if r.done {
            terminated = true;
            break;
        }
    }
    Ok(Trajectory {
        states,
        actions,
        rewards,
        final_state: s,
        terminated,
    })
}

/// Records `n_episodes` trajectories; deterministic given the seed.
pub fn record(
    policy: &StochasticPolicy,
    env: &dyn Env,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = sub_rng(seed, Stream::Record);
    (0..n_episodes)
        .map(|_| run_episode(policy, env, &mut rng))
        .collect()
}

/// Masks actions so exactly `round((1−η)·n)` survive per trajectory,
/// chosen uniformly at random. Deterministic given the seed.
pub fn mask(
    trajectories: &[Trajectory],
    env_name: &str,
    eta: f64,
    seed: u64,
) -> Result<IncompleteDemoSet> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(AgailError::Input(format!(
            "incompleteness ratio must be in [0, 1], got {eta}"
        )));
    }
    let mut rng = sub_rng(seed, Stream::Mask);
    let mut out = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let n = traj.states.len();
        let keep = ((1.0 - eta) * n as f64).round() as usize;
        // partial Fisher-Yates: first `keep` entries are the kept indices
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..keep.min(n) {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        let mut kept = vec![false; n];
        for &i in &idx[..keep] {
            kept[i] = true;
        }
        out.push(DemoTrajectory {
            states: traj.states.clone(),
            actions: traj
                .actions
                .iter()
                .zip(&kept)
                .map(|(a, &k)| if k { Some(a.clone()) } else { None })
                .collect(),
            rewards: traj.rewards.clone(),
        });
    }
    Ok(IncompleteDemoSet {
        env_name: env_name.to_string(),
        eta,
        source_seed: seed,
        trajectories: out,
    })
}

impl IncompleteDemoSet {
    pub fn total_states(&self) -> usize {
        self.trajectories.iter().map(|t| t.states.len()).sum()
    }

    pub fn present_action_count(&self) -> usize {
        self.trajectories
            .iter()
            .map(|t| t.actions.iter().filter(|a| a.is_some()).count())
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.trajectories
            .iter()
            .all(|t| t.actions.iter().all(|a| a.is_some()))
    }

    /// Uniform with-replacement sample over all demonstrated states.
    pub fn sample_expert_states(
        &self,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let flat: Vec<&Vec<f64>> = self
            .trajectories
            .iter()
            .flat_map(|t| t.states.iter())
            .collect();
        if flat.is_empty() {
            return Err(AgailError::Input("empty demonstration set".into()));
        }
        Ok((0..batch_size)
            .map(|_| flat[rng.gen_range(0..flat.len())].clone())
            .collect())
    }

    /// Uniform with-replacement sample over timesteps whose action
    /// survived masking. Empty when no actions survive (η = 1): the
    /// caller skips the guide update.
    pub fn sample_expert_action_pairs(
        &self,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(Vec<f64>, Action)> {
        let pool: Vec<(&Vec<f64>, &Action)> = self
            .trajectories
            .iter()
            .flat_map(|t| {
                t.states
                    .iter()
                    .zip(&t.actions)
                    .filter_map(|(s, a)| a.as_ref().map(|a| (s, a)))
            })
            .collect();
        if pool.is_empty() {
            return Vec::new();
        }
        (0..batch_size)
            .map(|_| {
                let (s, a) = pool[rng.gen_range(0..pool.len())];
                (s.clone(), a.clone())
            })
            .collect()
    }

    /// All surviving demonstrated actions, in trajectory order.
    pub fn surviving_actions(&self) -> Vec<Action> {
        self.trajectories
            .iter()
            .flat_map(|t| t.actions.iter().filter_map(|a| a.clone()))
            .collect()
    }

    // ----- persistence -----------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "AGAIL-DEMOS v1 env={} eta={} seed={}\n",
            self.env_name, self.eta, self.source_seed
        ));
        for t in &self.trajectories {
            let states: Vec<String> = t.states.iter().map(|s| join_floats(s)).collect();
            let actions: Vec<String> = t.actions.iter().map(encode_action_slot).collect();
            let rewards = join_floats(&t.rewards);
            out.push_str(&format!(
                "S:{}|A:{}|R:{}\n",
                states.join(";"),
                actions.join(";"),
                rewards
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<IncompleteDemoSet> {
        let text = fs::read_to_string(path)?;
        let perr = |line: usize, msg: String| AgailError::Parse {
            path: path.display().to_string(),
            line,
            message: msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| perr(1, "empty file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("AGAIL-DEMOS") || fields.next() != Some("v1") {
            return Err(perr(1, "bad demo file magic".into()));
        }
        let mut env_name = None;
        let mut eta = None;
        let mut seed = None;
        for kv in fields {
            match kv.split_once('=') {
                Some(("env", v)) => env_name = Some(v.to_string()),
                Some(("eta", v)) => {
                    eta = Some(v.parse().map_err(|_| perr(1, format!("bad eta '{v}'")))?)
                }
                Some(("seed", v)) => {
                    seed = Some(v.parse().map_err(|_| perr(1, format!("bad seed '{v}'")))?)
                }
                _ => return Err(perr(1, format!("unknown header field '{kv}'"))),
            }
        }
        let mut trajectories = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('|');
            let s_part = parts
                .next()
                .and_then(|p| p.strip_prefix("S:"))
                .ok_or_else(|| perr(lineno, "missing S: field".into()))?;
            let a_part = parts
                .next()
                .and_then(|p| p.strip_prefix("A:"))
                .ok_or_else(|| perr(lineno, "missing A: field".into()))?;
            let r_part = parts
                .next()
                .and_then(|p| p.strip_prefix("R:"))
                .ok_or_else(|| perr(lineno, "missing R: field".into()))?;
            let states: Vec<Vec<f64>> = s_part
                .split(';')
                .map(|s| parse_floats(s).map_err(|e| perr(lineno, e)))
                .collect::<Result<_>>()?;
            let actions: Vec<Option<Action>> = a_part
                .split(';')
                .map(|s| decode_action_slot(s).map_err(|e| perr(lineno, e)))
                .collect::<Result<_>>()?;
            let rewards = parse_floats(r_part).map_err(|e| perr(lineno, e))?;
            if actions.len() != states.len() || rewards.len() != states.len() {
                return Err(perr(lineno, "field lengths disagree".into()));
            }
            trajectories.push(DemoTrajectory {
                states,
                actions,
                rewards,
            });
        }
        Ok(IncompleteDemoSet {
            env_name: env_name.ok_or_else(|| perr(1, "missing env field".into()))?,
            eta: eta.ok_or_else(|| perr(1, "missing eta field".into()))?,
            source_seed: seed.ok_or_else(|| perr(1, "missing seed field".into()))?,
            trajectories,
        })
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse().map_err(|_| format!("bad float '{x}'")))
        .collect()
}

fn encode_action_slot(a: &Option<Action>) -> String {
    match a {
        None => "_".to_string(),
        Some(Action::Discrete(i)) => format!("d:{i}"),
        Some(Action::Continuous(v)) => format!("c:{}", join_floats(v)),
    }
}

fn decode_action_slot(s: &str) -> std::result::Result<Option<Action>, String> {
    if s == "_" {
        return Ok(None);
    }
    if let Some(body) = s.strip_prefix("d:") {
        return body
            .parse()
            .map(|i| Some(Action::Discrete(i)))
            .map_err(|_| format!("bad discrete action '{body}'"));
    }
    if let Some(body) = s.strip_prefix("c:") {
        return parse_floats(body).map(|v| Some(Action::Continuous(v)));
    }
    Err(format!("bad action slot '{s}'"))
}
