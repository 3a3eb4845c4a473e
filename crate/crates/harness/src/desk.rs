//! The desk-scale classification setup: procedural digits and a small
//! residual MLP trained on them.

use anyhow::Result;
use fgprop_core::net::{classification_accuracy, train, Loss, TrainConfig, TrainReport};
use fgprop_core::{Dataset, Network};
use serde::{Deserialize, Serialize};

use crate::datasets::{digits, DIGIT_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSetup {
    pub side: usize,
    pub hidden: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub data_seed: u64,
    pub test_seed: u64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for DeskSetup {
    fn default() -> Self {
        Self {
            side: 8,
            hidden: 32,
            train_count: 3000,
            test_count: 500,
            data_seed: 7,
            test_seed: 1007,
            init_seed: 7,
            train: TrainConfig { epochs: 30, learning_rate: 0.05, batch_size: 32, seed: 7, loss: Loss::CrossEntropy },
        }
    }
}

pub struct DeskModel {
    pub net: Network,
    pub train_set: Dataset,
    pub test_set: Dataset,
    pub report: TrainReport,
    pub test_accuracy: f64,
}

pub fn train_desk_model(setup: &DeskSetup) -> Result<DeskModel> {
    let train_set = digits(setup.train_count, setup.side, setup.data_seed)?;
    let test_set = digits(setup.test_count, setup.side, setup.test_seed)?;
    let init = Network::residual_mlp(setup.side * setup.side, setup.hidden, DIGIT_CLASSES, setup.init_seed)?;
    let (net, report) = train(&init, &train_set.samples, &setup.train)?;
    let test_accuracy = classification_accuracy(&net, &test_set.samples)?;
    Ok(DeskModel { net, train_set, test_set, report, test_accuracy })
}
