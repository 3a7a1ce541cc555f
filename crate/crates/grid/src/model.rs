//! Network data model.
//!
//! A [`GridCase`] is an immutable value: every mutation (connections,
//! mitigations, outages) goes through a function that returns a new case.
//! Bus ids are the external ids from the case file; [`BusIndex`] maps them
//! onto the dense indices used for matrix work.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::GridError;

/// Power factor assumed for load connections when only MW is known.
pub const LOAD_CONNECTION_POWER_FACTOR: f64 = 0.95;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                Self(v)
            }
        }
    };
}

id_newtype!(
    /// External bus number as it appears in the case file.
    BusId
);
id_newtype!(BranchId);
id_newtype!(GenId);
id_newtype!(LoadId);
id_newtype!(ShuntId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    #[serde(rename = "pv")]
    PV,
    #[serde(rename = "pq")]
    PQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Voltage magnitude setpoint (regulated buses) or initial guess (PQ), pu.
    pub v_setpoint: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    /// Off-nominal turns ratio; 1.0 is nominal.
    pub tap: f64,
    #[serde(default)]
    pub shift_deg: f64,
    /// Normal rating, MVA. Zero means unlimited.
    pub rate_a: f64,
    /// Emergency rating, MVA. Zero means unlimited.
    pub rate_b: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn rate(&self, emergency: bool) -> Option<f64> {
        let r = if emergency { self.rate_b } else { self.rate_a };
        (r > 0.0).then_some(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: GenId,
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub mva_rating: f64,
    pub in_service: bool,
    /// Whether the unit regulates its bus voltage. Connection injections do not.
    #[serde(default = "default_true")]
    pub regulating: bool,
    #[serde(default)]
    pub is_ibr: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: LoadId,
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Fixed bus shunt. `q_mvar` is the injection at 1 pu voltage, capacitive positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shunt {
    pub id: ShuntId,
    pub bus: BusId,
    #[serde(default)]
    pub g_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionType {
    Load,
    Solar,
    Wind,
    Bess,
    Hybrid,
    Synchronous,
}

impl ConnectionType {
    pub const ALL: [ConnectionType; 6] = [
        ConnectionType::Load,
        ConnectionType::Solar,
        ConnectionType::Wind,
        ConnectionType::Bess,
        ConnectionType::Hybrid,
        ConnectionType::Synchronous,
    ];

    pub fn is_ibr(self) -> bool {
        matches!(
            self,
            ConnectionType::Solar | ConnectionType::Wind | ConnectionType::Bess | ConnectionType::Hybrid
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConnectionType::Load => "load",
            ConnectionType::Solar => "solar",
            ConnectionType::Wind => "wind",
            ConnectionType::Bess => "bess",
            ConnectionType::Hybrid => "hybrid",
            ConnectionType::Synchronous => "synchronous",
        }
    }
}

impl fmt::Display for ConnectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConnectionType {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConnectionType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GridError::UnknownConnectionType(s.to_string()))
    }
}

/// A proposed connection: bus, active power, resource type and IBR flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRequest {
    pub bus: BusId,
    pub p_mw: f64,
    pub ctype: ConnectionType,
    pub is_ibr: bool,
}

impl ConnectionRequest {
    pub fn new(bus: impl Into<BusId>, p_mw: f64, ctype: ConnectionType) -> Self {
        Self {
            bus: bus.into(),
            p_mw,
            ctype,
            is_ibr: ctype.is_ibr(),
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !self.p_mw.is_finite() || self.p_mw < 0.0 {
            return Err(GridError::InvalidConnection(format!(
                "power must be a non-negative number of MW, got {}",
                self.p_mw
            )));
        }
        if self.is_ibr != self.ctype.is_ibr() {
            return Err(GridError::InvalidConnection(format!(
                "IBR flag {} inconsistent with type {}",
                self.is_ibr, self.ctype
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Element {
    Branch(BranchId),
    Generator(GenId),
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Branch(id) => write!(f, "branch {id}"),
            Element::Generator(id) => write!(f, "generator {id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuntMitigation {
    pub bus: BusId,
    pub q_mvar: f64,
}

/// Bookkeeping that travels with a case so reports can trace what was done to it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    #[serde(default)]
    pub connections: Vec<ConnectionRequest>,
    #[serde(default)]
    pub mitigations: Vec<ShuntMitigation>,
    #[serde(default)]
    pub outages: Vec<Element>,
    /// The in-service branch graph has more than one component.
    #[serde(default)]
    pub islanded: bool,
    /// Some bus carrying load or generation is cut off from the slack bus.
    #[serde(default)]
    pub non_solvable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub shunts: Vec<Shunt>,
    #[serde(default)]
    pub meta: CaseMeta,
}

/// Dense index map from external bus ids.
#[derive(Debug, Clone)]
pub struct BusIndex {
    map: HashMap<BusId, usize>,
}

impl BusIndex {
    pub fn get(&self, id: BusId) -> Option<usize> {
        self.map.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl GridCase {
    /// Checks the structural invariants every case must satisfy.
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(GridError::Invalid(format!("base MVA must be positive, got {}", self.base_mva)));
        }
        let mut seen = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if seen.insert(b.id, i).is_some() {
                return Err(GridError::Invalid(format!("duplicate bus id {}", b.id)));
            }
            if !(b.v_setpoint.is_finite() && b.v_setpoint > 0.0) {
                return Err(GridError::Invalid(format!("bus {} has non-positive voltage setpoint", b.id)));
            }
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return Err(GridError::Invalid(format!("expected exactly one slack bus, found {slack}")));
        }
        let check_bus = |bus: BusId, what: String| -> Result<(), GridError> {
            if seen.contains_key(&bus) {
                Ok(())
            } else {
                Err(GridError::UnknownBus { bus, context: what })
            }
        };
        for br in &self.branches {
            check_bus(br.from_bus, format!("branch {} from end", br.id))?;
            check_bus(br.to_bus, format!("branch {} to end", br.id))?;
            let finite = [br.r, br.x, br.b_charging, br.tap, br.shift_deg].iter().all(|v| v.is_finite());
            if !finite || (br.r == 0.0 && br.x == 0.0) || br.tap <= 0.0 {
                return Err(GridError::Invalid(format!("branch {} has invalid impedance or tap", br.id)));
            }
            if br.rate_a < 0.0 || br.rate_b < br.rate_a {
                return Err(GridError::Invalid(format!(
                    "branch {} ratings must satisfy rate_b >= rate_a >= 0 (got {} / {})",
                    br.id, br.rate_a, br.rate_b
                )));
            }
        }
        for g in &self.generators {
            check_bus(g.bus, format!("generator {}", g.id))?;
            if g.in_service && !(g.p_min <= g.p_mw && g.p_mw <= g.p_max) {
                return Err(GridError::Invalid(format!(
                    "generator {} dispatch {} MW outside [{}, {}]",
                    g.id, g.p_mw, g.p_min, g.p_max
                )));
            }
        }
        for l in &self.loads {
            check_bus(l.bus, format!("load {}", l.id))?;
        }
        for s in &self.shunts {
            check_bus(s.bus, format!("shunt {}", s.id))?;
        }
        Ok(())
    }

    pub fn bus_index(&self) -> BusIndex {
        BusIndex {
            map: self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect(),
        }
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn has_bus(&self, id: BusId) -> bool {
        self.bus(id).is_some()
    }

    pub fn slack_bus(&self) -> &Bus {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn generator(&self, id: GenId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn unknown_bus(&self, bus: BusId) -> GridError {
        let lo = self.buses.iter().map(|b| b.id.0).min().unwrap_or(0);
        let hi = self.buses.iter().map(|b| b.id.0).max().unwrap_or(0);
        GridError::UnknownBus {
            bus,
            context: format!("case {} has buses {lo}..={hi}", self.name),
        }
    }

    /// Net specified injection per bus (P MW, Q MVAr) from loads and
    /// in-service generators, in bus order. Shunts are not included; they
    /// live in the admittance matrix.
    pub fn bus_injections(&self) -> Vec<(f64, f64)> {
        let idx = self.bus_index();
        let mut inj = vec![(0.0, 0.0); self.buses.len()];
        for g in self.generators.iter().filter(|g| g.in_service) {
            if let Some(i) = idx.get(g.bus) {
                inj[i].0 += g.p_mw;
                inj[i].1 += g.q_mvar;
            }
        }
        for l in &self.loads {
            if let Some(i) = idx.get(l.bus) {
                inj[i].0 -= l.p_mw;
                inj[i].1 -= l.q_mvar;
            }
        }
        inj
    }

    /// Total load on each bus, MW/MVAr, in bus order.
    pub fn bus_load(&self) -> Vec<(f64, f64)> {
        let idx = self.bus_index();
        let mut out = vec![(0.0, 0.0); self.buses.len()];
        for l in &self.loads {
            if let Some(i) = idx.get(l.bus) {
                out[i].0 += l.p_mw;
                out[i].1 += l.q_mvar;
            }
        }
        out
    }

    /// Buses that serve at least one non-zero load, in case order.
    pub fn load_buses(&self) -> Vec<BusId> {
        let load = self.bus_load();
        self.buses
            .iter()
            .zip(load)
            .filter(|(_, (p, q))| *p != 0.0 || *q != 0.0)
            .map(|(b, _)| b.id)
            .collect()
    }

    /// Adds the proposed connection. Loads get a fixed 0.95 lagging power
    /// factor; every other type becomes a non-regulating PQ injection.
    pub fn apply_connection(&self, req: &ConnectionRequest) -> Result<GridCase, GridError> {
        req.validate()?;
        if !self.has_bus(req.bus) {
            return Err(self.unknown_bus(req.bus));
        }
        let mut out = self.clone();
        match req.ctype {
            ConnectionType::Load => {
                let pf = LOAD_CONNECTION_POWER_FACTOR;
                let q = req.p_mw * (1.0 - pf * pf).sqrt() / pf;
                let id = LoadId(out.loads.iter().map(|l| l.id.0).max().unwrap_or(0) + 1);
                out.loads.push(Load {
                    id,
                    bus: req.bus,
                    p_mw: req.p_mw,
                    q_mvar: q,
                });
            }
            _ => {
                let id = GenId(out.generators.iter().map(|g| g.id.0).max().unwrap_or(0) + 1);
                out.generators.push(Generator {
                    id,
                    bus: req.bus,
                    p_mw: req.p_mw,
                    q_mvar: 0.0,
                    p_min: req.p_mw,
                    p_max: req.p_mw,
                    q_min: 0.0,
                    q_max: 0.0,
                    mva_rating: req.p_mw,
                    in_service: true,
                    regulating: false,
                    is_ibr: req.is_ibr,
                });
            }
        }
        out.meta.connections.push(*req);
        Ok(out)
    }

    /// Adds a fixed shunt at `bus` and records the mitigation.
    pub fn apply_shunt_mitigation(&self, bus: BusId, q_mvar: f64) -> Result<GridCase, GridError> {
        if !self.has_bus(bus) {
            return Err(self.unknown_bus(bus));
        }
        if !q_mvar.is_finite() {
            return Err(GridError::Invalid(format!("mitigation MVAr must be finite, got {q_mvar}")));
        }
        let mut out = self.clone();
        let id = ShuntId(out.shunts.iter().map(|s| s.id.0).max().unwrap_or(0) + 1);
        out.shunts.push(Shunt {
            id,
            bus,
            g_mw: 0.0,
            q_mvar,
        });
        out.meta.mitigations.push(ShuntMitigation { bus, q_mvar });
        Ok(out)
    }

    /// Connected components of the in-service branch graph, as dense bus
    /// indices. Component order follows the lowest bus index it contains.
    pub fn islands(&self) -> Vec<Vec<usize>> {
        let idx = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            if let (Some(f), Some(t)) = (idx.get(br.from_bus), idx.get(br.to_bus)) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Recomputes the islanding flags in `meta` from the current topology.
    pub(crate) fn refresh_connectivity(&mut self) {
        let islands = self.islands();
        self.meta.islanded = islands.len() > 1;
        let idx = self.bus_index();
        let slack = idx.get(self.slack_bus().id).expect("slack indexed");
        let active = self.active_buses();
        self.meta.non_solvable = islands
            .iter()
            .filter(|c| !c.contains(&slack))
            .any(|c| c.iter().any(|&i| active[i]));
    }

    /// Buses with load, a non-zero shunt or an in-service generator.
    pub(crate) fn active_buses(&self) -> Vec<bool> {
        let idx = self.bus_index();
        let mut active = vec![false; self.buses.len()];
        let mut mark = |bus: BusId| {
            if let Some(i) = idx.get(bus) {
                active[i] = true;
            }
        };
        self.loads.iter().filter(|l| l.p_mw != 0.0 || l.q_mvar != 0.0).for_each(|l| mark(l.bus));
        self.generators.iter().filter(|g| g.in_service).for_each(|g| mark(g.bus));
        self.shunts.iter().filter(|s| s.q_mvar != 0.0 || s.g_mw != 0.0).for_each(|s| mark(s.bus));
        active
    }

    /// Returns the sub-case made of the buses in `keep` (dense indices) and
    /// every element attached only to them.
    pub fn restricted_to(&self, keep: &[usize]) -> GridCase {
        let keep_ids: std::collections::HashSet<BusId> = keep.iter().map(|&i| self.buses[i].id).collect();
        let mut out = self.clone();
        out.buses.retain(|b| keep_ids.contains(&b.id));
        out.branches
            .retain(|b| keep_ids.contains(&b.from_bus) && keep_ids.contains(&b.to_bus));
        out.generators.retain(|g| keep_ids.contains(&g.bus));
        out.loads.retain(|l| keep_ids.contains(&l.bus));
        out.shunts.retain(|s| keep_ids.contains(&s.bus));
        out.refresh_connectivity();
        out
    }

    /// Canonical JSON form used by the service layer.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("case serializes")
    }
}
