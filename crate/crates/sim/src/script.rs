//! Line-oriented scenario scripts.
//!
//! ```text
//! # three nodes, one of them byzantine
//! nodes a b c
//! tamper c payload
//! submit a 3
//! mine a
//! deliver a b
//! partition a,b|c
//! heal
//! sync 2
//! crash b
//! restart b
//! ```

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::network::{Byzantine, Network};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Nodes(Vec<String>),
    /// Marks a node byzantine with the given behavior.
    Tamper(String, Byzantine),
    Submit(String, usize),
    Mine(String),
    /// Delivers one link, or every link until the network is quiet.
    Deliver(Option<(String, String)>),
    Partition(Vec<Vec<String>>),
    Heal,
    Sync(usize),
    Crash(String),
    Restart(String),
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Nodes(ids) => write!(f, "nodes {}", ids.join(" ")),
            Instruction::Tamper(id, mode) => write!(f, "tamper {id} {mode}"),
            Instruction::Submit(id, n) => write!(f, "submit {id} {n}"),
            Instruction::Mine(id) => write!(f, "mine {id}"),
            Instruction::Deliver(None) => f.write_str("deliver"),
            Instruction::Deliver(Some((from, to))) => write!(f, "deliver {from} {to}"),
            Instruction::Partition(groups) => {
                let groups: Vec<String> = groups.iter().map(|g| g.join(",")).collect();
                write!(f, "partition {}", groups.join("|"))
            }
            Instruction::Heal => f.write_str("heal"),
            Instruction::Sync(n) => write!(f, "sync {n}"),
            Instruction::Crash(id) => write!(f, "crash {id}"),
            Instruction::Restart(id) => write!(f, "restart {id}"),
        }
    }
}

fn parse_line(line: &str) -> Result<Instruction, String> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let count = |s: &str| s.parse::<usize>().map_err(|_| format!("expected a count, got {s:?}"));
    Ok(match words.as_slice() {
        ["nodes", ids @ ..] if !ids.is_empty() => Instruction::Nodes(ids.iter().map(|s| s.to_string()).collect()),
        ["node", id] => Instruction::Nodes(vec![id.to_string()]),
        ["tamper", id] => Instruction::Tamper(id.to_string(), Byzantine::PayloadTamper),
        ["tamper", id, mode] => Instruction::Tamper(id.to_string(), mode.parse()?),
        ["submit", id] => Instruction::Submit(id.to_string(), 1),
        ["submit", id, n] => Instruction::Submit(id.to_string(), count(n)?),
        ["mine", id] => Instruction::Mine(id.to_string()),
        ["deliver"] => Instruction::Deliver(None),
        ["deliver", from, to] => Instruction::Deliver(Some((from.to_string(), to.to_string()))),
        ["partition", spec] => Instruction::Partition(
            spec.split('|').map(|g| g.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect()).collect(),
        ),
        ["heal"] => Instruction::Heal,
        ["sync"] => Instruction::Sync(1),
        ["sync", n] => Instruction::Sync(count(n)?),
        ["crash", id] => Instruction::Crash(id.to_string()),
        ["restart", id] => Instruction::Restart(id.to_string()),
        _ => return Err(format!("unrecognised instruction {line:?}")),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub instructions: Vec<Instruction>,
}

impl FromStr for Script {
    type Err = SimError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut instructions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            instructions.push(parse_line(line).map_err(|message| SimError::Parse { line: i + 1, message })?);
        }
        Ok(Script { instructions })
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for instruction in &self.instructions {
            writeln!(f, "{instruction}")?;
        }
        Ok(())
    }
}

impl Network {
    /// Applies one instruction, then advances the logical clock.
    pub fn step(&mut self, instruction: &Instruction) -> Result<(), SimError> {
        match instruction {
            Instruction::Nodes(ids) => {
                for id in ids {
                    self.add_node(id)?;
                }
            }
            Instruction::Tamper(id, mode) => self.set_byzantine(id, Some(*mode))?,
            Instruction::Submit(id, n) => {
                self.submit(id, *n)?;
            }
            Instruction::Mine(id) => {
                self.mine(id)?;
            }
            Instruction::Deliver(None) => {
                self.deliver_all()?;
            }
            Instruction::Deliver(Some((from, to))) => {
                self.deliver(from, to)?;
            }
            Instruction::Partition(groups) => self.partition(groups.clone())?,
            Instruction::Heal => self.heal(),
            Instruction::Sync(rounds) => {
                for _ in 0..*rounds {
                    self.sync()?;
                }
            }
            Instruction::Crash(id) => self.crash(id)?,
            Instruction::Restart(id) => self.restart(id)?,
        }
        self.tick();
        Ok(())
    }

    pub fn run(&mut self, script: &Script) -> Result<(), SimError> {
        for instruction in &script.instructions {
            self.step(instruction)?;
        }
        Ok(())
    }
}

/// Runs `script` on a fresh network.
pub fn run_script(script: &Script, seed: u64, difficulty: u32) -> Result<Network, SimError> {
    let mut network = Network::new(seed, difficulty);
    network.run(script)?;
    Ok(network)
}

/// Bounds for generated scenarios.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioShape {
    pub max_nodes: usize,
    pub steps: usize,
    pub byzantine: bool,
}

impl Default for ScenarioShape {
    fn default() -> Self {
        ScenarioShape { max_nodes: 7, steps: 30, byzantine: true }
    }
}

/// A random but always well-formed scenario. The instructions after the
/// random section restart every node, heal, and sync once per node plus two.
pub fn random_scenario(seed: u64, shape: ScenarioShape) -> Script {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=shape.max_nodes.max(2));
    let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut out = vec![Instruction::Nodes(ids.clone())];
    if shape.byzantine && rng.gen_bool(0.75) {
        let who = ids.choose(&mut rng).expect("at least two nodes").clone();
        out.push(Instruction::Tamper(who, *Byzantine::ALL.choose(&mut rng).expect("non-empty")));
    }
    let mut online = vec![true; n];
    for _ in 0..shape.steps {
        let live: Vec<usize> = (0..n).filter(|&i| online[i]).collect();
        let pick = |rng: &mut ChaCha20Rng| ids[*live.choose(rng).expect("one node always stays up")].clone();
        let instruction = match rng.gen_range(0..10) {
            0 | 1 => Instruction::Submit(pick(&mut rng), rng.gen_range(1..=20)),
            2 | 3 => Instruction::Mine(pick(&mut rng)),
            4 => {
                let from = ids.choose(&mut rng).expect("non-empty").clone();
                let to = ids.choose(&mut rng).expect("non-empty").clone();
                Instruction::Deliver(Some((from, to)))
            }
            5 => Instruction::Deliver(None),
            6 => {
                let mut shuffled = ids.clone();
                shuffled.shuffle(&mut rng);
                let cut = rng.gen_range(1..n);
                Instruction::Partition(vec![shuffled[..cut].to_vec(), shuffled[cut..].to_vec()])
            }
            7 => Instruction::Heal,
            8 if live.len() > 1 => {
                let i = *live.choose(&mut rng).expect("non-empty");
                online[i] = false;
                Instruction::Crash(ids[i].clone())
            }
            8 => Instruction::Sync(1),
            _ => match (0..n).find(|&i| !online[i]) {
                Some(i) => {
                    online[i] = true;
                    Instruction::Restart(ids[i].clone())
                }
                None => Instruction::Sync(1),
            },
        };
        out.push(instruction);
    }
    for (i, id) in ids.iter().enumerate() {
        if !online[i] {
            out.push(Instruction::Restart(id.clone()));
        }
    }
    out.push(Instruction::Heal);
    out.push(Instruction::Sync(n + 2));
    Script { instructions: out }
}
