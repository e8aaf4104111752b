#pragma once

#include "mtn/memory_bank.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace mtn {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ordered partition of classes into tasks with per-task train/eval data.
struct TaskStream {
  struct Task {
    std::vector<int> classes;
    std::vector<FeatureRecord> train;
    std::vector<FeatureRecord> eval;
  };
  int dim = 0;
  std::vector<Task> tasks;

  // FNV-1a over dims, class assignment, labels and feature bytes. Two
  // artifacts carrying equal hashes came from identical streams.
  std::uint64_t content_hash() const;
};

struct SyntheticSpec {
  int num_classes = 8;
  int dim = 32;
  int train_per_class = 60;
  int eval_per_class = 20;
  double cluster_spread = 1.3;    // sigma of the per-class isotropic Gaussian
  // When > cluster_spread, each class draws its own sigma uniformly from
  // [cluster_spread, cluster_spread_max]; 0 keeps a shared sigma.
  double cluster_spread_max = 0.0;
  double mean_separation = 1.0;   // scale of the class means
  std::uint64_t seed = 0;

  void validate() const;
};

// Half of the classes in the first task, then tasks of `task_size` (the last
// may be smaller). Class-to-task assignment follows a seeded shuffle of
// class ids; within a task classes are listed ascending.
TaskStream split_into_tasks(const std::vector<FeatureRecord>& train_records,
                            const std::vector<FeatureRecord>& eval_records, int num_classes,
                            int task_size, std::uint64_t shuffle_seed);

// One isotropic Gaussian cluster per class around a seeded random mean;
// output features are L2-normalized. Deterministic for a given spec.
void generate_synthetic_records(const SyntheticSpec& spec,
                                std::vector<FeatureRecord>& train_out,
                                std::vector<FeatureRecord>& eval_out);

TaskStream generate_synthetic(const SyntheticSpec& spec, int task_size);

// Binary feature file: magic "MTNF", u32 version, u64 n, u32 d, then n*d
// float32 row-major values and n u32 labels, all little-endian. Values are
// widened to 64-bit in memory.
void write_feature_file(const std::vector<FeatureRecord>& records, int dim,
                        const std::string& path);
std::vector<FeatureRecord> read_feature_file(const std::string& path, int& dim_out);

// ---- Checkpoint ----------------------------------------------------------
// Magic "MTNC", u32 version, then named length-prefixed sections.

struct Checkpoint {
  std::string config_text;                       // resolved key=value config
  std::uint64_t stream_hash = 0;
  std::string model_kind;                        // "mtn" | "linear"
  std::vector<Eigen::MatrixXd> model_params;
  std::vector<int> trained_classes;
  bool has_snapshot = false;
  std::vector<Eigen::MatrixXd> snapshot_params;
  std::vector<Eigen::MatrixXd> optimizer_velocity;
  std::vector<FeatureRecord> memory_records;
  std::uint64_t memory_next_seq = 0;
  std::string rng_state;                         // textual mt19937_64 state
  int completed_tasks = 0;
  std::vector<double> per_task_top1;
  std::vector<int> per_task_class_counts;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);
std::string checkpoint_to_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::string& bytes);

// ---- Config & metrics log ------------------------------------------------

// Line-oriented key=value config. '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path);
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::string config_to_text(const std::map<std::string, std::string>& kv);

}  // namespace mtn
