// Acceptance gate: nine end-to-end properties of the incremental learning
// engine, one printed pass/fail line each. Exits non-zero when any fails.

#include "mtn/evaluation.hpp"
#include "mtn/model.hpp"
#include "mtn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

using namespace mtn;

namespace {

int g_failures = 0;

double gauss_sample(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  return gauss(rng);
}

void report(int index, const char* name, bool ok, const std::string& detail = "") {
  std::printf("[%d] %-28s %s%s%s\n", index, name, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : " — ", detail.c_str());
  if (!ok) ++g_failures;
}

Eigen::VectorXd random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
  return v.normalized();
}

// ---- 1. Gradient integrity -------------------------------------------------
// Full loss pipeline (separated softmax + task-wise distillation) on a d=4,
// k=2, 1-layer model: analytic gradients vs central finite differences.
void criterion_gradient_integrity() {
  MtnConfig mc;
  mc.input_dim = 4;
  mc.model_dim = 8;
  mc.num_layers = 1;
  mc.num_heads = 2;
  mc.k = 2;
  mc.num_classes_capacity = 4;
  MtnModel model(mc, 17);
  auto snapshot = model.clone();
  std::mt19937_64 rng(7);
  Eigen::VectorXd q = random_unit(4, rng);
  std::vector<Eigen::VectorXd> neighbors{random_unit(4, rng), random_unit(4, rng)};
  TaskPartition part{{{0, 1}, {2, 3}}, 1};
  const int y = 2;

  auto loss_value = [&]() {
    Tensor logits = model.training_logits(q, neighbors);
    Eigen::VectorXd prev = snapshot->infer_logits(q, neighbors);
    return total_loss(logits, prev, y, part, 1.0);
  };

  Tensor loss = loss_value();
  backward(loss);

  double max_rel = 0.0;
  const double h = 1e-5;
  auto params = model.parameters();
  for (auto& p : params) {
    Eigen::MatrixXd analytic = p.grad();
    for (Eigen::Index i = 0; i < p.value().size(); ++i) {
      double saved = p.value().data()[i];
      p.mutable_value().data()[i] = saved + h;
      double up = loss_value().item();
      p.mutable_value().data()[i] = saved - h;
      double down = loss_value().item();
      p.mutable_value().data()[i] = saved;
      double numeric = (up - down) / (2 * h);
      double diff = std::abs(numeric - analytic.data()[i]);
      // Entries whose difference sits below finite-difference noise are exact
      // matches for this purpose; the relative test covers the rest.
      if (diff < 1e-8) continue;
      double denom = std::max(std::abs(numeric), std::abs(analytic.data()[i]));
      max_rel = std::max(max_rel, diff / denom);
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max relative error %.3g", max_rel);
  report(1, "gradient integrity", max_rel < 1e-3, buf);
}

// ---- 2. kNN oracle equivalence ---------------------------------------------
void criterion_knn_oracle() {
  std::mt19937_64 rng(23);
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::uniform_int_distribution<int> size_pick(1, 500);
    std::uniform_int_distribution<int> dim_pick(2, 12);
    const int n = size_pick(rng), dim = dim_pick(rng);
    ExemplarMemory mem(static_cast<std::size_t>(n), dim);
    std::vector<FeatureRecord> data;
    for (int i = 0; i < n; ++i) data.push_back({random_unit(dim, rng), 0, 0, 0});
    mem.update_after_task(data, {0});

    Eigen::VectorXd q = random_unit(dim, rng);
    std::uniform_int_distribution<int> k_pick(1, n + 2);
    const int k = k_pick(rng);
    auto hits = mem.knn_query(q, k);

    // Exhaustive scan over the flat view with the same ordering rules.
    auto [flat, labels] = mem.as_matrix();
    std::vector<std::pair<double, std::size_t>> scored;
    Eigen::VectorXd qn = q.normalized();
    for (Eigen::Index r = 0; r < flat.rows(); ++r)
      scored.emplace_back(flat.row(r).dot(qn), static_cast<std::size_t>(r));
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const std::size_t expect = std::min<std::size_t>(k, scored.size());
    if (hits.size() != expect) ok = false;
    for (std::size_t i = 0; ok && i < expect; ++i)
      if (hits[i].index != scored[i].second) ok = false;
  }
  report(2, "kNN oracle equivalence", ok);
}

// ---- 3. Memory-budget invariants -------------------------------------------
void criterion_memory_invariants() {
  std::mt19937_64 rng(31);
  bool ok = true;
  for (int round = 0; round < 5 && ok; ++round) {
    std::uniform_int_distribution<int> budget_pick(10, 60);
    const std::size_t M = static_cast<std::size_t>(budget_pick(rng));
    ExemplarMemory mem(M, 4);
    // The stress rounds intentionally exceed the budget with more classes
    // than M, so the recoverable zero-quota warning is expected; keep the
    // criterion output clean.
    mem.warning_handler = {};
    int next_class = 0;
    for (int task = 0; task < 20 && ok; ++task) {
      std::uniform_int_distribution<int> classes_pick(1, 3);
      std::uniform_int_distribution<int> count_pick(1, 25);
      std::vector<int> new_classes;
      std::vector<FeatureRecord> data;
      const int nc = classes_pick(rng);
      for (int c = 0; c < nc; ++c) {
        new_classes.push_back(next_class);
        const int count = count_pick(rng);
        for (int i = 0; i < count; ++i)
          data.push_back({random_unit(4, rng), next_class, task, 0});
        ++next_class;
      }
      std::map<int, std::size_t> prev_count;
      auto before = mem.all_records();
      for (const auto& r : before) prev_count[r.label] += 1;
      std::map<int, std::size_t> incoming;
      for (const auto& r : data) incoming[r.label] += 1;
      mem.update_after_task(data, new_classes);

      if (mem.size() > M) ok = false;

      // Per-class counts equal min(quota, available): quota is floor(M/S)
      // with the remainder going to the lowest class ids; availability is the
      // pre-update count for old classes and the submitted count for new ones.
      auto seen = mem.seen_classes();
      const std::size_t S = seen.size();
      const std::size_t base = M / S, rem = M % S;
      for (std::size_t ci = 0; ok && ci < seen.size(); ++ci) {
        const int c = seen[ci];
        const std::size_t quota = base + (ci < rem ? 1 : 0);
        const std::size_t available =
            prev_count.count(c) ? prev_count[c] : incoming[c];
        if (mem.class_count(c) != std::min(quota, available)) ok = false;
      }

      // FIFO eviction: for every class present before, the survivors must be
      // exactly the most recently inserted records of that class.
      if (ok) {
        auto after = mem.all_records();
        std::map<int, std::vector<std::uint64_t>> before_seqs, after_seqs;
        for (const auto& r : before) before_seqs[r.label].push_back(r.insertion_seq);
        for (const auto& r : after) after_seqs[r.label].push_back(r.insertion_seq);
        for (auto& [label, seqs] : before_seqs) {
          const auto& kept = after_seqs[label];
          if (kept.size() > seqs.size()) { ok = false; break; }
          // Survivors are the suffix (largest insertion_seq values).
          std::vector<std::uint64_t> tail(seqs.end() - static_cast<long>(kept.size()),
                                          seqs.end());
          if (tail != kept) { ok = false; break; }
        }
      }
    }
  }
  report(3, "memory-budget invariants", ok);
}

// ---- 4. Loss contracts -------------------------------------------------------
void criterion_loss_contracts() {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> gauss(0.0, 2.0);
  bool ok = true;
  for (int trial = 0; trial < 100 && ok; ++trial) {
    TaskPartition part{{{0, 1, 2}, {3, 4}}, 1};
    Eigen::MatrixXd z(1, 5);
    for (int i = 0; i < 5; ++i) z(0, i) = gauss(rng);

    // Inactive-partition gradient is exactly zero: a current-class label must
    // not touch old logits and vice versa.
    {
      Tensor logits = Tensor::parameter(z);
      Tensor loss = separated_softmax_loss(logits, 3, part);  // current task
      backward(loss);
      for (int c : {0, 1, 2})
        if (logits.grad()(0, c) != 0.0) ok = false;
      Tensor logits2 = Tensor::parameter(z);
      Tensor loss2 = separated_softmax_loss(logits2, 1, part);  // old classes
      backward(loss2);
      for (int c : {3, 4})
        if (logits2.grad()(0, c) != 0.0) ok = false;
    }

    // Distillation is exactly zero at t=1 and when live equals snapshot.
    {
      TaskPartition first{{{0, 1, 2}}, 0};
      Eigen::MatrixXd z3 = z.leftCols(3);
      if (task_distillation_loss(Tensor::constant(z3), Eigen::VectorXd::Zero(3), first, 1.0)
              .item() != 0.0)
        ok = false;
      Eigen::VectorXd prev = z.row(0).transpose();
      if (task_distillation_loss(Tensor::constant(z), prev, part, 1.0).item() != 0.0)
        ok = false;
    }
  }
  report(4, "loss contracts", ok);
}

// ---- 5. Permutation invariance -----------------------------------------------
void criterion_permutation_invariance() {
  std::mt19937_64 rng(53);
  MtnConfig mc;
  mc.input_dim = 6;
  mc.model_dim = 16;
  mc.num_layers = 2;
  mc.num_heads = 2;
  mc.k = 5;
  mc.num_classes_capacity = 3;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    MtnModel model(mc, 100 + trial);
    Eigen::VectorXd q = random_unit(6, rng);
    std::vector<Eigen::VectorXd> neighbors;
    for (int i = 0; i < 5; ++i) neighbors.push_back(random_unit(6, rng));
    Eigen::MatrixXd base = model.adapt(q, neighbors).value();
    std::vector<Eigen::VectorXd> shuffled = neighbors;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    Eigen::MatrixXd perm = model.adapt(q, shuffled).value();
    worst = std::max(worst, (base - perm).cwiseAbs().maxCoeff());
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max deviation %.3g", worst);
  report(5, "permutation invariance", worst < 1e-9, buf);
}

// ---- Pinned stream + configuration shared by criteria 6–8 -------------------

TaskStream pinned_stream() {
  SyntheticSpec spec;
  spec.num_classes = 8;
  spec.dim = 32;
  spec.train_per_class = 60;
  spec.eval_per_class = 20;
  spec.cluster_spread = 0.3;
  spec.cluster_spread_max = 2.5;
  spec.mean_separation = 1.0;
  spec.seed = 32;
  return generate_synthetic(spec, 2);  // tasks of 4 + 2 + 2 classes
}

TrainConfig pinned_config(std::size_t memory_budget) {
  TrainConfig cfg;
  cfg.epochs_per_task = 20;
  cfg.batch_new = 128;
  cfg.batch_replay = 24;
  cfg.optimizer.learning_rate = 0.01;
  cfg.k = 1;
  cfg.memory_budget = memory_budget;
  cfg.seed = 2;
  return cfg;
}

MtnConfig pinned_model(const TrainConfig& cfg) {
  MtnConfig mc;
  mc.input_dim = 32;
  mc.model_dim = 32;
  mc.num_layers = 1;
  mc.num_heads = 2;
  mc.k = cfg.k;
  mc.num_classes_capacity = 8;
  return mc;
}

RunMetrics pinned_mtn_run(const TaskStream& stream, const TrainConfig& cfg) {
  TrainerState st(std::make_unique<MtnModel>(pinned_model(cfg), cfg.seed), cfg, stream.dim);
  return run_incremental(st, stream, cfg);
}

// ---- 6. Determinism -----------------------------------------------------------
void criterion_determinism() {
  TaskStream stream = pinned_stream();
  TrainConfig cfg = pinned_config(480);
  std::string bytes[2];
  std::vector<double> top1[2];
  for (int r = 0; r < 2; ++r) {
    TrainerState st(std::make_unique<MtnModel>(pinned_model(cfg), cfg.seed), cfg, stream.dim);
    RunMetrics m = run_incremental(st, stream, cfg);
    top1[r] = m.per_task_top1;
    bytes[r] = checkpoint_to_bytes(make_checkpoint(st, "acceptance", stream.content_hash()));
  }
  report(6, "determinism", top1[0] == top1[1] && bytes[0] == bytes[1]);
}

// ---- 7 & 8. Trend reproduction and memory robustness ---------------------------
// Values derived from the first verified run of this pinned configuration and
// frozen; tolerance 0.005 (half an accuracy point).
void criteria_trends() {
  const double kTol = 0.005;
  const double kMtnFull = 0.71875;
  const double kLinFull = 0.57222222222222219;
  const double kKnnFull = 0.70208333333333339;
  const double kMtnQuarter = 0.73888888888888893;
  const double kLinQuarter = 0.56944444444444442;

  TaskStream stream = pinned_stream();

  TrainConfig cfg = pinned_config(480);
  double mtn_full = pinned_mtn_run(stream, cfg).average_incremental_accuracy;
  double lin_full = linear_baseline_run(stream, cfg).average_incremental_accuracy;
  double knn_full = memknn_baseline_run(stream, cfg).average_incremental_accuracy;

  bool pinned_ok = std::abs(mtn_full - kMtnFull) < kTol &&
                   std::abs(lin_full - kLinFull) < kTol &&
                   std::abs(knn_full - kKnnFull) < kTol;
  bool ordering = mtn_full > lin_full && mtn_full > knn_full;
  char buf[128];
  std::snprintf(buf, sizeof buf, "mtn %.4f > linear %.4f, mem-kNN %.4f", mtn_full, lin_full,
                knn_full);
  report(7, "trend reproduction", pinned_ok && ordering, buf);

  TrainConfig quarter = pinned_config(120);
  double mtn_q = pinned_mtn_run(stream, quarter).average_incremental_accuracy;
  double lin_q = linear_baseline_run(stream, quarter).average_incremental_accuracy;
  bool pinned_q_ok =
      std::abs(mtn_q - kMtnQuarter) < kTol && std::abs(lin_q - kLinQuarter) < kTol;
  double mtn_drop = mtn_full - mtn_q;
  double lin_drop = lin_full - lin_q;
  std::snprintf(buf, sizeof buf, "M/4 drop: linear %+.4f vs mtn %+.4f", lin_drop, mtn_drop);
  report(8, "memory robustness", pinned_q_ok && lin_drop > mtn_drop, buf);
}

// ---- 9. Serialization ------------------------------------------------------------
void criterion_serialization() {
  bool ok = true;

  // Feature file round-trip.
  std::mt19937_64 rng(71);
  std::vector<FeatureRecord> records;
  for (int i = 0; i < 40; ++i) {
    Eigen::VectorXd f(6);
    for (int j = 0; j < 6; ++j) f(j) = static_cast<float>(gauss_sample(rng));
    records.push_back({f, i % 5, 0, 0});
  }
  const std::string path = "acceptance_features.bin";
  write_feature_file(records, 6, path);
  int dim = 0;
  auto back = read_feature_file(path, dim);
  std::remove(path.c_str());
  if (dim != 6 || back.size() != records.size()) ok = false;
  for (std::size_t i = 0; ok && i < records.size(); ++i) {
    if (back[i].label != records[i].label) ok = false;
    if ((back[i].features.array() != records[i].features.array()).any()) ok = false;
  }

  // Resumed training is bit-identical to uninterrupted training.
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.dim = 8;
  spec.train_per_class = 12;
  spec.eval_per_class = 4;
  spec.seed = 3;
  TaskStream stream = generate_synthetic(spec, 1);
  TrainConfig cfg;
  cfg.epochs_per_task = 3;
  cfg.batch_new = 16;
  cfg.batch_replay = 4;
  cfg.k = 3;
  cfg.memory_budget = 24;
  cfg.seed = 5;
  cfg.optimizer.learning_rate = 0.05;
  MtnConfig mc;
  mc.input_dim = 8;
  mc.model_dim = 16;
  mc.num_layers = 1;
  mc.num_heads = 2;
  mc.k = cfg.k;
  mc.num_classes_capacity = 4;

  TrainerState full(std::make_unique<MtnModel>(mc, cfg.seed), cfg, stream.dim);
  std::string mid_bytes;
  run_incremental(full, stream, cfg,
                  {.on_task_end = [&](int t, const TrainerState& s) {
                    if (t == 1) mid_bytes = checkpoint_to_bytes(make_checkpoint(s, "acc", 0));
                  }});
  std::string full_bytes = checkpoint_to_bytes(make_checkpoint(full, "acc", 0));

  // Checkpoint round-trip through disk.
  const std::string ckpt_path = "acceptance_ckpt.bin";
  write_checkpoint(checkpoint_from_bytes(full_bytes), ckpt_path);
  if (checkpoint_to_bytes(read_checkpoint(ckpt_path)) != full_bytes) ok = false;
  std::remove(ckpt_path.c_str());

  Checkpoint mid = checkpoint_from_bytes(mid_bytes);
  TrainerState resumed =
      restore_trainer(mid, cfg, std::make_unique<MtnModel>(mc, cfg.seed + 1));
  run_incremental(resumed, stream, cfg);
  if (checkpoint_to_bytes(make_checkpoint(resumed, "acc", 0)) != full_bytes) ok = false;

  report(9, "serialization", ok);
}

}  // namespace

int main() {
  criterion_gradient_integrity();
  criterion_knn_oracle();
  criterion_memory_invariants();
  criterion_loss_contracts();
  criterion_permutation_invariance();
  criterion_determinism();
  criteria_trends();
  criterion_serialization();
  if (g_failures) std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
