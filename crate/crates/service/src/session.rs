use std::collections::VecDeque;
use std::time::Instant;

use amodal_ls::pipeline::PipelineRun;
use amodal_ls::{BinaryMask, EvolutionConfig, PointPrompt, ScalarField};
use rand::RngCore;

/// Ground truth kept for sessions created from a synthetic seed.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub amodal: BinaryMask,
    pub visible: BinaryMask,
    pub occlusion_rate: f64,
}

#[derive(Debug)]
pub struct StoredRun {
    pub id: u64,
    pub config: EvolutionConfig,
    /// Prompts the run was computed from.
    pub prompts: Vec<PointPrompt>,
    pub run: PipelineRun,
}

impl StoredRun {
    /// Stored frames: every phi plus every velocity.
    pub fn frame_count(&self) -> usize {
        self.run.phis.len() + self.run.velocities.len()
    }
}

#[derive(Debug)]
pub struct Session {
    pub image: ScalarField,
    pub truth: Option<GroundTruth>,
    pub prompts: Vec<PointPrompt>,
    pub runs: VecDeque<StoredRun>,
    pub next_run: u64,
    /// Set once any run has been dropped to respect the frame cap.
    pub evicted: bool,
    pub created: Instant,
    pub updated: Instant,
}

impl Session {
    pub fn new(image: ScalarField, truth: Option<GroundTruth>) -> Self {
        let now = Instant::now();
        Self {
            image,
            truth,
            prompts: Vec::new(),
            runs: VecDeque::new(),
            next_run: 0,
            evicted: false,
            created: now,
            updated: now,
        }
    }

    pub fn touch(&mut self) {
        self.updated = Instant::now();
    }

    /// Stores a run, then drops the oldest runs until the frame cap holds.
    /// The newest run is always kept.
    pub fn push_run(
        &mut self,
        config: EvolutionConfig,
        prompts: Vec<PointPrompt>,
        run: PipelineRun,
        frame_cap: usize,
    ) -> u64 {
        let id = self.next_run;
        self.next_run += 1;
        self.runs.push_back(StoredRun {
            id,
            config,
            prompts,
            run,
        });
        while self.runs.len() > 1
            && self.runs.iter().map(StoredRun::frame_count).sum::<usize>() > frame_cap
        {
            self.runs.pop_front();
            self.evicted = true;
        }
        id
    }

    pub fn run(&self, id: Option<u64>) -> Option<&StoredRun> {
        match id {
            Some(id) => self.runs.iter().find(|r| r.id == id),
            None => self.runs.back(),
        }
    }
}

/// 128 random bits from the OS-seeded thread generator, hex encoded.
pub fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}
