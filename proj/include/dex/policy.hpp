#pragma once

// Chunk policies backed by the toy denoiser, and the builders that turn
// demonstrations into (condition, flattened chunk) training pairs.

#include "dex/denoiser.hpp"
#include "dex/executor.hpp"
#include "dex/pipeline.hpp"
#include "dex/sim.hpp"

#include <cstdint>

namespace dex {

struct DiffusionPolicyConfig {
  int horizon = 16;  // T_p; the model's action_dim must be 11 * horizon
  DdimOptions ddim{10, 0.0, true};
  bool use_ema = true;
  std::uint64_t seed = 0;
};

/// Samples one chunk per request with DDIM. Each request draws its noise
/// from a substream keyed by the observation time, so a run is a pure
/// function of (parameters, observations, seed).
class DiffusionPolicy : public ChunkPolicy {
 public:
  DiffusionPolicy(ToyDenoiser model, NoiseSchedule schedule, DiffusionPolicyConfig cfg);
  std::vector<Action> plan(const Observation& obs) override;

  const DiffusionPolicyConfig& config() const { return cfg_; }

 private:
  ToyDenoiser model_;
  NoiseSchedule schedule_;
  DiffusionPolicyConfig cfg_;
  EpsFn eps_;
};

/// Stacks T_p actions into an (11 T_p)-vector and back.
Eigen::VectorXd flatten_chunk(const std::vector<Action>& chunk);
std::vector<Action> unflatten_chunk(const Eigen::VectorXd& flat);

/// One example per step that has horizon labels ahead of it. Conditions
/// carry no scenario features.
TrainingSet chunk_training_set(const DemoDataset& dataset, int horizon);

/// Runs the scripted expert through the executor and records every plan
/// request as (condition with scenario features, chunk).
TrainingSet expert_training_set(const SimScenario& sc, const EpisodeConfig& cfg, int episodes,
                                std::uint64_t seed);

/// One-dimensional toy targets with a constant unit condition:
///   mixture   equal-weight modes at +-1, each with std 0.1
///   gaussian  N(2, 0.5^2)
TrainingSet toy_training_set(const std::string& kind, int n, std::uint64_t seed);

/// Column-wise concatenation; throws on mismatched row counts.
TrainingSet concat(const TrainingSet& a, const TrainingSet& b);

}  // namespace dex
