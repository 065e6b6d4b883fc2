#pragma once

// File formats. Poses are [x, y, z, qw, qx, qy, qz], planar poses
// [x, y, theta]; everything is SI. JSONL readers report the offending line.
//
// Session directory:
//   vio.jsonl        {"node","t","pose":[7],"cov_trace"} and {"node","t","tag_pose":[7]}
//   extrinsics.json  {"chest":[7],"hand":[7]}
//   markers.jsonl    {"t","distance_m"}
//   images.jsonl     {"camera","t","path"}   (optional)
//   session.json     {"id"}                  (optional; the directory name otherwise)

#include "dex/anchoring.hpp"
#include "dex/denoiser.hpp"
#include "dex/executor.hpp"
#include "dex/pipeline.hpp"
#include "dex/sim.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dex {

/// Malformed or missing input. line is 1-based, 0 when not line-specific.
class InputError : public Error {
 public:
  InputError(const std::string& file, int line, const std::string& what);
  std::string file;
  int line = 0;
};

std::string read_text(const std::filesystem::path& p);
/// Writes atomically enough for our purposes: truncate and write, creating parent directories.
void write_text(const std::filesystem::path& p, const std::string& content);
/// FNV-1a 64 of the bytes as 16 hex digits.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& p);

struct VioRecords {
  VioTrajectory chest{Node::chest, {}};
  VioTrajectory hand{Node::hand, {}};
  std::vector<TagDetection> detections;
};

VioRecords read_vio_jsonl(const std::filesystem::path& p);
std::string vio_jsonl(const VioTrajectory& chest, const VioTrajectory& hand,
                      const std::vector<TagDetection>& detections);

std::pair<Extrinsic, Extrinsic> read_extrinsics(const std::filesystem::path& p);
std::string extrinsics_json(const Extrinsic& chest, const Extrinsic& hand);

GripperCalib read_calib(const std::filesystem::path& p);
std::string calib_json(const GripperCalib& c);

RawSession read_session(const std::filesystem::path& dir);
void write_session(const RawSession& s, const std::filesystem::path& dir);

std::string anchor_json(const AnchorResult& a);
/// Reads the cross-node transform back from an anchor file.
Pose3 read_anchor(const std::filesystem::path& p);

std::string dataset_jsonl(const DemoDataset& d);
std::vector<DemoStep> read_dataset_jsonl(const std::filesystem::path& p);

/// One example per line: {"cond":[...],"a0":[...]}.
std::string training_set_jsonl(const TrainingSet& ts);
TrainingSet read_training_set(const std::filesystem::path& p);

struct Checkpoint {
  ToyDenoiser model;
  NoiseSchedule schedule;
  int horizon = 0;           // T_p for chunk models, 0 otherwise
  int scenario_dim = 0;      // condition layout, when the model is a chunk policy
  int ddim_steps = 10;       // sampler steps used at deployment
};

std::string checkpoint_json(const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& p);

std::string episode_log_jsonl(const EpisodeLog& log);

/// Simulation settings as a JSON document with sections plant, executor,
/// tracker, expert and episode. Reading starts from base and overrides only
/// the keys present; unknown keys are errors.
std::string episode_config_json(const EpisodeConfig& cfg);
EpisodeConfig read_episode_config(const std::filesystem::path& p, EpisodeConfig base);

std::string summary_json(const std::vector<ConditionSummary>& summaries, const std::string& scenario,
                         double latency_ms);
std::vector<EpisodeMetrics> read_metrics_csv(const std::filesystem::path& p);

}  // namespace dex
