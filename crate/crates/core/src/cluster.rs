//! The three-party demo setup (Hospital and Statistics contractors plus a
//! requester) wired over any transport.

use std::path::Path;
use std::sync::Arc;

use crate::coordinator::{Coordinator, CoordinatorConfig};
use crate::node::{Node, NodeConfig};
use crate::scripts;
use crate::txn::{DecisionLog, TxnManager};
use crate::wire::{LocalTransport, Transport};

/// URL hosts come lowercased, so authorities are kept lowercase.
pub const HOSPITAL_AUTHORITY: &str = "servd1:8180";
pub const STATISTICS_AUTHORITY: &str = "servd2:8180";
pub const REQUESTER_AUTHORITY: &str = "servr:8180";
pub const REQUESTER_NAME: &str = "Requester";

/// Opens a node for `db`, on disk under `dir` when given, and loads `script`
/// if the database is still empty.
pub fn contractor(db: &str, script: &str, dir: Option<&Path>) -> Result<Arc<Node>, String> {
    let mut config = NodeConfig::open(db);
    config.log_path = dir.map(|d| d.join(format!("{db}.log")));
    let node = Node::open(config).map_err(|e| e.to_string())?;
    if node.database().snapshot().tables().next().is_none() {
        node.engine().execute_script(script).map_err(|e| format!("{db}: {}", e.error))?;
    }
    Ok(Arc::new(node))
}

pub fn requester(config: CoordinatorConfig, transport: Arc<dyn Transport>) -> Result<Arc<Coordinator>, String> {
    let c = Arc::new(Coordinator::new(config, transport));
    c.execute_script(scripts::REQUESTER).map_err(|e| e.to_string())?;
    Ok(c)
}

/// Everything in one process over a [`LocalTransport`].
pub struct LocalCluster {
    pub transport: Arc<LocalTransport>,
    pub hospital: Arc<Node>,
    pub statistics: Arc<Node>,
    pub coordinator: Arc<Coordinator>,
    pub txn: TxnManager,
}

impl LocalCluster {
    pub fn start() -> LocalCluster {
        LocalCluster::with(CoordinatorConfig::new(REQUESTER_NAME), None).expect("demo scripts load")
    }

    /// Contractor logs (and the decision log) live under `dir` when given.
    pub fn with(config: CoordinatorConfig, dir: Option<&Path>) -> Result<LocalCluster, String> {
        let transport = Arc::new(LocalTransport::new());
        let hospital = contractor("Hospital", scripts::HOSPITAL, dir)?;
        let statistics = contractor("Statistics", scripts::STATISTICS, dir)?;
        transport.register(HOSPITAL_AUTHORITY, hospital.clone());
        transport.register(STATISTICS_AUTHORITY, statistics.clone());
        let coordinator = requester(config, transport.clone())?;
        transport.register(REQUESTER_AUTHORITY, coordinator.clone());
        let decisions = match dir {
            Some(d) => DecisionLog::open(d.join("decisions.log")).map_err(|e| e.to_string())?,
            None => DecisionLog::in_memory(),
        };
        let txn = TxnManager::new(coordinator.clone(), Arc::new(decisions));
        Ok(LocalCluster {
            transport,
            hospital,
            statistics,
            coordinator,
            txn,
        })
    }

    /// Replaces the transaction manager as after a coordinator crash: the
    /// decision log is rebuilt from its bytes.
    pub fn restart_coordinator_txn(&mut self) {
        let log = match self.txn.decisions().path() {
            Some(p) => DecisionLog::open(p).expect("decision log reopens"),
            None => DecisionLog::recover(&self.txn.decisions().image()),
        };
        self.txn = TxnManager::new(self.coordinator.clone(), Arc::new(log));
    }
}
