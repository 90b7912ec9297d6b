use crate::bytecode::{CodeOrigin, Opcode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-opcode costs for interpreted and compiled code, plus the trap penalty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CostSpec", into = "CostSpec")]
pub struct CostModel {
    cf_bc: [u64; 14],
    cf_nc: [u64; 14],
    pub deopt_penalty: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::uniform(10, 1, 50)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("cost table is missing opcode `{0}`")]
    Missing(&'static str),
    #[error("opcodes `{0}` and `{1}` cost the same in bytecode but differ in native code")]
    NotPreserved(&'static str, &'static str),
}

impl CostModel {
    pub fn uniform(bc: u64, nc: u64, deopt_penalty: u64) -> Self {
        CostModel {
            cf_bc: [bc; 14],
            cf_nc: [nc; 14],
            deopt_penalty,
        }
    }

    /// Builds a model and checks that equal bytecode costs stay equal natively.
    pub fn new(
        cf_bc: &BTreeMap<Opcode, u64>,
        cf_nc: &BTreeMap<Opcode, u64>,
        deopt_penalty: u64,
    ) -> Result<Self, CostError> {
        let mut bc = [0; 14];
        let mut nc = [0; 14];
        for (k, op) in Opcode::ALL.iter().enumerate() {
            bc[k] = *cf_bc.get(op).ok_or(CostError::Missing(op.name()))?;
            nc[k] = *cf_nc.get(op).ok_or(CostError::Missing(op.name()))?;
        }
        let m = CostModel {
            cf_bc: bc,
            cf_nc: nc,
            deopt_penalty,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<(), CostError> {
        for a in 0..14 {
            for b in 0..14 {
                if self.cf_bc[a] == self.cf_bc[b] && self.cf_nc[a] != self.cf_nc[b] {
                    return Err(CostError::NotPreserved(Opcode::ALL[a].name(), Opcode::ALL[b].name()));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn cf_bc(&self, op: Opcode) -> u64 {
        self.cf_bc[op as usize]
    }

    #[inline]
    pub fn cf_nc(&self, op: Opcode) -> u64 {
        self.cf_nc[op as usize]
    }

    #[inline]
    pub fn cost(&self, origin: CodeOrigin, op: Opcode) -> u64 {
        match origin {
            CodeOrigin::Bytecode => self.cf_bc(op),
            CodeOrigin::Native => self.cf_nc(op),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Table {
    Uniform(u64),
    PerOpcode(BTreeMap<Opcode, u64>),
}

#[derive(Serialize, Deserialize)]
struct CostSpec {
    cf_bc: Table,
    cf_nc: Table,
    #[serde(default = "default_penalty")]
    deopt_penalty: u64,
}

fn default_penalty() -> u64 {
    50
}

fn expand(t: Table) -> BTreeMap<Opcode, u64> {
    match t {
        Table::Uniform(v) => Opcode::ALL.iter().map(|&o| (o, v)).collect(),
        Table::PerOpcode(m) => m,
    }
}

impl TryFrom<CostSpec> for CostModel {
    type Error = CostError;
    fn try_from(s: CostSpec) -> Result<Self, CostError> {
        CostModel::new(&expand(s.cf_bc), &expand(s.cf_nc), s.deopt_penalty)
    }
}

impl From<CostModel> for CostSpec {
    fn from(m: CostModel) -> Self {
        let table = |a: &[u64; 14]| {
            if a.iter().all(|&x| x == a[0]) {
                Table::Uniform(a[0])
            } else {
                Table::PerOpcode(Opcode::ALL.iter().map(|&o| (o, a[o as usize])).collect())
            }
        };
        CostSpec {
            cf_bc: table(&m.cf_bc),
            cf_nc: table(&m.cf_nc),
            deopt_penalty: m.deopt_penalty,
        }
    }
}
