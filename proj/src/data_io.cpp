#include "mtn/data_io.hpp"

#include "mtn/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace mtn {

namespace {

constexpr char kFeatureMagic[4] = {'M', 'T', 'N', 'F'};
constexpr char kCheckpointMagic[4] = {'M', 'T', 'N', 'C'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

template <typename T>
std::uint64_t fnv1a_value(std::uint64_t h, T v) {
  return fnv1a(h, &v, sizeof(v));
}

// Little-endian raw writers. The build targets little-endian hosts; the
// formats are defined as little-endian either way.
template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

struct Cursor {
  const std::string& buf;
  std::size_t at = 0;

  template <typename T>
  T get(const char* what) {
    if (at + sizeof(T) > buf.size())
      throw IoError(std::string("truncated while reading ") + what + " at byte offset " +
                    std::to_string(at));
    T v;
    std::memcpy(&v, buf.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    if (at + n > buf.size())
      throw IoError(std::string("truncated while reading ") + what + " at byte offset " +
                    std::to_string(at));
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

void put_matrix(std::string& out, const Eigen::MatrixXd& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  out.append(reinterpret_cast<const char*>(m.data()),
             static_cast<std::size_t>(m.size()) * sizeof(double));
}

Eigen::MatrixXd get_matrix(Cursor& c) {
  auto rows = c.get<std::uint32_t>("matrix rows");
  auto cols = c.get<std::uint32_t>("matrix cols");
  Eigen::MatrixXd m(rows, cols);
  std::string raw = c.bytes(static_cast<std::size_t>(rows) * cols * sizeof(double),
                            "matrix payload");
  std::memcpy(m.data(), raw.data(), raw.size());
  return m;
}

void put_matrices(std::string& out, const std::vector<Eigen::MatrixXd>& ms) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ms.size()));
  for (const auto& m : ms) put_matrix(out, m);
}

std::vector<Eigen::MatrixXd> get_matrices(Cursor& c) {
  auto n = c.get<std::uint32_t>("matrix count");
  std::vector<Eigen::MatrixXd> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(get_matrix(c));
  return out;
}

void put_section(std::string& out, const std::string& name, const std::string& payload) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put<std::uint64_t>(out, payload.size());
  out.append(payload);
}

}  // namespace

std::uint64_t TaskStream::content_hash() const {
  std::uint64_t h = kFnvOffset;
  h = fnv1a_value(h, static_cast<std::uint32_t>(dim));
  h = fnv1a_value(h, static_cast<std::uint32_t>(tasks.size()));
  for (const auto& t : tasks) {
    for (int c : t.classes) h = fnv1a_value(h, static_cast<std::uint32_t>(c));
    for (const auto* part : {&t.train, &t.eval}) {
      h = fnv1a_value(h, static_cast<std::uint64_t>(part->size()));
      for (const auto& r : *part) {
        h = fnv1a_value(h, static_cast<std::uint32_t>(r.label));
        h = fnv1a(h, r.features.data(),
                  static_cast<std::size_t>(r.features.size()) * sizeof(double));
      }
    }
  }
  return h;
}

void SyntheticSpec::validate() const {
  if (num_classes <= 0 || dim <= 0 || train_per_class <= 0 || eval_per_class <= 0)
    throw ArgumentError("synthetic spec: counts must be positive");
  if (cluster_spread < 0) throw ArgumentError("synthetic spec: spread must be non-negative");
  if (cluster_spread_max != 0 && cluster_spread_max < cluster_spread)
    throw ArgumentError("synthetic spec: spread_max must be 0 or >= spread");
  if (mean_separation <= 0) throw ArgumentError("synthetic spec: separation must be positive");
}

TaskStream split_into_tasks(const std::vector<FeatureRecord>& train_records,
                            const std::vector<FeatureRecord>& eval_records, int num_classes,
                            int task_size, std::uint64_t shuffle_seed) {
  const int first = num_classes / 2;
  if (task_size <= 0 || task_size > num_classes - first)
    throw ArgumentError("split_into_tasks: task size " + std::to_string(task_size) +
                        " invalid for " + std::to_string(num_classes) + " classes");
  std::vector<int> ids(num_classes);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  TaskStream stream;
  int at = 0;
  while (at < num_classes) {
    int take = at == 0 ? first : std::min(task_size, num_classes - at);
    TaskStream::Task task;
    task.classes.assign(ids.begin() + at, ids.begin() + at + take);
    std::sort(task.classes.begin(), task.classes.end());
    stream.tasks.push_back(std::move(task));
    at += take;
  }

  std::vector<int> class_to_task(num_classes, -1);
  for (std::size_t t = 0; t < stream.tasks.size(); ++t)
    for (int c : stream.tasks[t].classes) class_to_task[c] = static_cast<int>(t);

  auto place = [&](const std::vector<FeatureRecord>& records, bool train) {
    for (const auto& r : records) {
      if (r.label < 0 || r.label >= num_classes)
        throw ArgumentError("split_into_tasks: label " + std::to_string(r.label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
      if (stream.dim == 0) stream.dim = static_cast<int>(r.features.size());
      FeatureRecord rec = r;
      rec.task_id = class_to_task[r.label];
      auto& task = stream.tasks[static_cast<std::size_t>(rec.task_id)];
      (train ? task.train : task.eval).push_back(std::move(rec));
    }
  };
  place(train_records, true);
  place(eval_records, false);
  return stream;
}

void generate_synthetic_records(const SyntheticSpec& spec,
                                std::vector<FeatureRecord>& train_out,
                                std::vector<FeatureRecord>& eval_out) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](double s) {
    Eigen::VectorXd v(spec.dim);
    for (int i = 0; i < spec.dim; ++i) v(i) = s * gauss(rng);
    return v;
  };
  std::uniform_real_distribution<double> spread_range(spec.cluster_spread, spec.cluster_spread_max);
  for (int c = 0; c < spec.num_classes; ++c) {
    Eigen::VectorXd mean = draw(spec.mean_separation);
    const double sigma = spec.cluster_spread_max > spec.cluster_spread ? spread_range(rng)
                                                                       : spec.cluster_spread;
    auto emit = [&](std::vector<FeatureRecord>& out, int count) {
      for (int i = 0; i < count; ++i) {
        Eigen::VectorXd f = mean + draw(sigma);
        double n = f.norm();
        if (n > 0) f /= n;
        out.push_back({std::move(f), c, 0, 0});
      }
    };
    emit(train_out, spec.train_per_class);
    emit(eval_out, spec.eval_per_class);
  }
}

TaskStream generate_synthetic(const SyntheticSpec& spec, int task_size) {
  std::vector<FeatureRecord> train, eval;
  generate_synthetic_records(spec, train, eval);
  return split_into_tasks(train, eval, spec.num_classes, task_size, spec.seed);
}

void write_feature_file(const std::vector<FeatureRecord>& records, int dim,
                        const std::string& path) {
  if (dim <= 0) throw ArgumentError("write_feature_file: dim must be positive");
  std::string out;
  out.append(kFeatureMagic, 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, records.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  for (const auto& r : records) {
    if (r.features.size() != dim)
      throw DimensionError("write_feature_file: record dim " +
                           std::to_string(r.features.size()) + " != " + std::to_string(dim));
    for (int i = 0; i < dim; ++i) put<float>(out, static_cast<float>(r.features(i)));
  }
  for (const auto& r : records) {
    if (r.label < 0) throw ArgumentError("write_feature_file: negative label");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.label));
  }
  spit(path, out);
}

std::vector<FeatureRecord> read_feature_file(const std::string& path, int& dim_out) {
  std::string buf = slurp(path);
  Cursor c{buf};
  std::string magic = c.bytes(4, "magic");
  if (std::memcmp(magic.data(), kFeatureMagic, 4) != 0)
    throw IoError("bad magic in " + path + " at byte offset 0 (not an MTNF feature file)");
  auto version = c.get<std::uint32_t>("version");
  if (version != kFormatVersion)
    throw IoError("unsupported MTNF version " + std::to_string(version) + " in " + path);
  auto n = c.get<std::uint64_t>("record count");
  auto d = c.get<std::uint32_t>("dimension");
  if (d == 0) throw IoError("dimension 0 in " + path + " at byte offset 16");
  const std::size_t need =
      c.at + static_cast<std::size_t>(n) * d * sizeof(float) + static_cast<std::size_t>(n) * 4;
  if (buf.size() < need)
    throw IoError("truncated payload in " + path + ": declared n=" + std::to_string(n) +
                  " d=" + std::to_string(d) + " needs " + std::to_string(need) +
                  " bytes, file has " + std::to_string(buf.size()) +
                  " (short at byte offset " + std::to_string(buf.size()) + ")");
  if (buf.size() > need)
    throw IoError("trailing bytes in " + path + " at byte offset " + std::to_string(need));
  std::vector<FeatureRecord> records(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Eigen::VectorXd f(d);
    for (std::uint32_t j = 0; j < d; ++j) f(j) = static_cast<double>(c.get<float>("feature"));
    records[i].features = std::move(f);
  }
  for (std::uint64_t i = 0; i < n; ++i)
    records[i].label = static_cast<int>(c.get<std::uint32_t>("label"));
  dim_out = static_cast<int>(d);
  return records;
}

std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kFormatVersion);

  put_section(out, "config", ckpt.config_text);

  std::string state;
  put<std::uint64_t>(state, ckpt.stream_hash);
  put<std::uint32_t>(state, static_cast<std::uint32_t>(ckpt.completed_tasks));
  put<std::uint32_t>(state, static_cast<std::uint32_t>(ckpt.per_task_top1.size()));
  for (double v : ckpt.per_task_top1) put<double>(state, v);
  put<std::uint32_t>(state, static_cast<std::uint32_t>(ckpt.per_task_class_counts.size()));
  for (int v : ckpt.per_task_class_counts) put<std::uint32_t>(state, static_cast<std::uint32_t>(v));
  put_section(out, "state", state);

  std::string model;
  put<std::uint32_t>(model, static_cast<std::uint32_t>(ckpt.model_kind.size()));
  model.append(ckpt.model_kind);
  put<std::uint32_t>(model, static_cast<std::uint32_t>(ckpt.trained_classes.size()));
  for (int c : ckpt.trained_classes) put<std::uint32_t>(model, static_cast<std::uint32_t>(c));
  put_matrices(model, ckpt.model_params);
  put_section(out, "model", model);

  std::string snap;
  put<std::uint8_t>(snap, ckpt.has_snapshot ? 1 : 0);
  if (ckpt.has_snapshot) put_matrices(snap, ckpt.snapshot_params);
  put_section(out, "snapshot", snap);

  std::string opt;
  put_matrices(opt, ckpt.optimizer_velocity);
  put_section(out, "optimizer", opt);

  std::string mem;
  put<std::uint64_t>(mem, ckpt.memory_next_seq);
  put<std::uint64_t>(mem, ckpt.memory_records.size());
  for (const auto& r : ckpt.memory_records) {
    put<std::uint32_t>(mem, static_cast<std::uint32_t>(r.label));
    put<std::uint32_t>(mem, static_cast<std::uint32_t>(r.task_id));
    put<std::uint64_t>(mem, r.insertion_seq);
    put<std::uint32_t>(mem, static_cast<std::uint32_t>(r.features.size()));
    mem.append(reinterpret_cast<const char*>(r.features.data()),
               static_cast<std::size_t>(r.features.size()) * sizeof(double));
  }
  put_section(out, "memory", mem);

  put_section(out, "rng", ckpt.rng_state);
  return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  Cursor c{bytes};
  std::string magic = c.bytes(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw IoError("bad magic at byte offset 0 (not an MTNC checkpoint)");
  auto version = c.get<std::uint32_t>("version");
  if (version != kFormatVersion)
    throw IoError("unsupported MTNC version " + std::to_string(version));

  Checkpoint ckpt;
  while (c.at < bytes.size()) {
    auto name_len = c.get<std::uint32_t>("section name length");
    std::string name = c.bytes(name_len, "section name");
    auto payload_len = c.get<std::uint64_t>("section length");
    std::string payload = c.bytes(static_cast<std::size_t>(payload_len), "section payload");
    Cursor s{payload};
    if (name == "config") {
      ckpt.config_text = payload;
    } else if (name == "state") {
      ckpt.stream_hash = s.get<std::uint64_t>("stream hash");
      ckpt.completed_tasks = static_cast<int>(s.get<std::uint32_t>("completed tasks"));
      auto na = s.get<std::uint32_t>("accuracy count");
      for (std::uint32_t i = 0; i < na; ++i)
        ckpt.per_task_top1.push_back(s.get<double>("accuracy"));
      auto nc = s.get<std::uint32_t>("class count size");
      for (std::uint32_t i = 0; i < nc; ++i)
        ckpt.per_task_class_counts.push_back(
            static_cast<int>(s.get<std::uint32_t>("class count")));
    } else if (name == "model") {
      auto kind_len = s.get<std::uint32_t>("model kind length");
      ckpt.model_kind = s.bytes(kind_len, "model kind");
      auto tc = s.get<std::uint32_t>("trained class count");
      for (std::uint32_t i = 0; i < tc; ++i)
        ckpt.trained_classes.push_back(static_cast<int>(s.get<std::uint32_t>("trained class")));
      ckpt.model_params = get_matrices(s);
    } else if (name == "snapshot") {
      ckpt.has_snapshot = s.get<std::uint8_t>("snapshot flag") != 0;
      if (ckpt.has_snapshot) ckpt.snapshot_params = get_matrices(s);
    } else if (name == "optimizer") {
      ckpt.optimizer_velocity = get_matrices(s);
    } else if (name == "memory") {
      ckpt.memory_next_seq = s.get<std::uint64_t>("memory next seq");
      auto n = s.get<std::uint64_t>("memory record count");
      for (std::uint64_t i = 0; i < n; ++i) {
        FeatureRecord r;
        r.label = static_cast<int>(s.get<std::uint32_t>("record label"));
        r.task_id = static_cast<int>(s.get<std::uint32_t>("record task"));
        r.insertion_seq = s.get<std::uint64_t>("record seq");
        auto d = s.get<std::uint32_t>("record dim");
        std::string raw = s.bytes(static_cast<std::size_t>(d) * sizeof(double), "record data");
        r.features.resize(d);
        std::memcpy(r.features.data(), raw.data(), raw.size());
        ckpt.memory_records.push_back(std::move(r));
      }
    } else if (name == "rng") {
      ckpt.rng_state = payload;
    } else {
      throw IoError("unknown checkpoint section '" + name + "'");
    }
  }
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  spit(path, checkpoint_to_bytes(ckpt));
}

Checkpoint read_checkpoint(const std::string& path) {
  try {
    return checkpoint_from_bytes(slurp(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("config line " + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw IoError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  try {
    return parse_config_text(slurp(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string config_to_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace mtn
