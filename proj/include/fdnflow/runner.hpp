#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdnflow/color.hpp"
#include "fdnflow/energy.hpp"
#include "fdnflow/flo.hpp"
#include "fdnflow/image.hpp"
#include "fdnflow/metrics.hpp"
#include "fdnflow/model.hpp"
#include "fdnflow/optim.hpp"

namespace fdnflow {

using json = nlohmann::ordered_json;

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PhantomSpec {
  int size = 256;
  double shift = 3.0;
  std::vector<CircleSpec> circles;  // empty -> default upper/lower pair

  std::vector<CircleSpec> resolved_circles() const {
    return circles.empty() ? default_phantom_circles(size, shift) : circles;
  }
};

struct ExperimentConfig {
  std::string name = "phantom";
  std::optional<PhantomSpec> phantom = PhantomSpec{};
  std::string frame1_path;
  std::string frame2_path;
  std::string gt_path;  // optional ground-truth .flo
  EnergyWeights weights{0.2, 0.8, 0.0};
  int epochs = 1;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  int depth = 4;
  std::string output_dir;
  LossNorm loss_norm = LossNorm::Mean;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (learning_rate <= 0.0)
      throw std::invalid_argument("learning rate must be positive");
    if (depth < 1) throw std::invalid_argument("depth must be >= 1");
    weights.validate();
    if (!phantom && (frame1_path.empty() || frame2_path.empty()))
      throw std::invalid_argument("either a phantom spec or two frame paths required");
  }

  json to_json() const {
    json j;
    j["name"] = name;
    if (phantom) {
      json p;
      p["type"] = "phantom";
      p["size"] = phantom->size;
      p["shift"] = phantom->shift;
      json cs = json::array();
      for (const auto& c : phantom->circles)
        cs.push_back({{"row", c.row},
                      {"col", c.col},
                      {"radius", c.radius},
                      {"intensity", c.intensity},
                      {"du", c.du},
                      {"dv", c.dv}});
      p["circles"] = cs;
      j["input"] = p;
    } else {
      j["input"] = {{"type", "frames"},
                    {"frame1", frame1_path},
                    {"frame2", frame2_path},
                    {"gt", gt_path}};
    }
    j["lambda1"] = weights.lambda1;
    j["lambda2"] = weights.lambda2;
    j["lambda_tv"] = weights.lambda_tv;
    j["epochs"] = epochs;
    j["learning_rate"] = learning_rate;
    j["seed"] = seed;
    j["depth"] = depth;
    j["batch_size"] = 1;  // fixed
    j["loss_norm"] = loss_norm == LossNorm::Mean ? "mean" : "sum";
    return j;
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    c.name = j.at("name").get<std::string>();
    const json& in = j.at("input");
    if (in.at("type") == "phantom") {
      PhantomSpec p;
      p.size = in.at("size").get<int>();
      p.shift = in.at("shift").get<double>();
      for (const auto& cj : in.at("circles"))
        p.circles.push_back({cj.at("row").get<double>(), cj.at("col").get<double>(),
                             cj.at("radius").get<double>(),
                             cj.at("intensity").get<double>(),
                             cj.at("du").get<double>(), cj.at("dv").get<double>()});
      c.phantom = p;
    } else {
      c.phantom.reset();
      c.frame1_path = in.at("frame1").get<std::string>();
      c.frame2_path = in.at("frame2").get<std::string>();
      c.gt_path = in.value("gt", std::string{});
    }
    c.weights.lambda1 = j.at("lambda1").get<double>();
    c.weights.lambda2 = j.at("lambda2").get<double>();
    c.weights.lambda_tv = j.at("lambda_tv").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.depth = j.at("depth").get<int>();
    c.loss_norm =
        j.at("loss_norm") == "sum" ? LossNorm::Sum : LossNorm::Mean;
    return c;
  }
};

struct EpochRecord {
  int epoch = 0;
  double total_loss = 0.0;
  double data_l1 = 0.0;
  double data_l2 = 0.0;
  double tv = 0.0;
  std::optional<MetricReport> metrics;

  json to_json() const {
    json j;
    j["epoch"] = epoch;
    j["total_loss"] = total_loss;
    j["data_l1"] = data_l1;
    j["data_l2"] = data_l2;
    j["tv"] = tv;
    if (metrics) {
      j["aee"] = metrics->aee;
      j["sdee"] = metrics->sdee;
      j["aae"] = metrics->aae;
      j["sdae"] = metrics->sdae;
    }
    return j;
  }
};

// Full training state: enough to resume bit-exactly.
struct Checkpoint {
  json config;
  std::vector<std::pair<std::string, std::vector<double>>> parameters;
  std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>>
      bn_running_stats;  // name -> (mean, var)
  AdamState adam;
  int epoch = 0;  // completed epochs at snapshot time
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  bool flow_uses_batch_stats = true;  // mode in which flows are emitted
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint");
}

inline void write_vec(std::ostream& out, const std::vector<double>& v) {
  write_pod(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_vec(std::istream& in) {
  std::uint64_t n = 0;
  read_pod(in, n);
  if (n > (1ull << 32)) throw FormatError("implausible checkpoint array length");
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw FormatError("truncated checkpoint");
  return v;
}

inline void write_str(std::ostream& out, const std::string& s) {
  write_pod(out, static_cast<std::uint64_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& in) {
  std::uint64_t n = 0;
  read_pod(in, n);
  if (n > (1ull << 30)) throw FormatError("implausible checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n))
    throw FormatError("truncated checkpoint");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint: " + path);
    out.write("FDNCKPT1", 8);
    detail::write_str(out, ck.config.dump());
    detail::write_pod(out, static_cast<std::uint64_t>(ck.parameters.size()));
    for (const auto& [name, data] : ck.parameters) {
      detail::write_str(out, name);
      detail::write_vec(out, data);
    }
    detail::write_pod(out, static_cast<std::uint64_t>(ck.bn_running_stats.size()));
    for (const auto& [name, stats] : ck.bn_running_stats) {
      detail::write_str(out, name);
      detail::write_vec(out, stats.first);
      detail::write_vec(out, stats.second);
    }
    detail::write_pod(out, static_cast<std::int64_t>(ck.adam.step_count));
    detail::write_pod(out, ck.adam.beta1);
    detail::write_pod(out, ck.adam.beta2);
    detail::write_pod(out, ck.adam.epsilon);
    detail::write_pod(out, static_cast<std::uint64_t>(ck.adam.first_moment.size()));
    for (std::size_t i = 0; i < ck.adam.first_moment.size(); ++i) {
      detail::write_vec(out, ck.adam.first_moment[i]);
      detail::write_vec(out, ck.adam.second_moment[i]);
    }
    detail::write_pod(out, static_cast<std::int32_t>(ck.epoch));
    detail::write_pod(out, ck.best_loss);
    detail::write_pod(out, static_cast<std::int32_t>(ck.best_epoch));
    detail::write_pod(out, static_cast<std::uint8_t>(ck.flow_uses_batch_stats));
    if (!out) throw FormatError("short write on checkpoint: " + path);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "FDNCKPT1")
    throw FormatError("bad checkpoint magic in " + path);
  Checkpoint ck;
  ck.config = json::parse(detail::read_str(in), nullptr, false);
  if (ck.config.is_discarded())
    throw FormatError("bad checkpoint config in " + path);
  std::uint64_t np = 0;
  detail::read_pod(in, np);
  for (std::uint64_t i = 0; i < np; ++i) {
    std::string name = detail::read_str(in);
    ck.parameters.emplace_back(std::move(name), detail::read_vec(in));
  }
  std::uint64_t nb = 0;
  detail::read_pod(in, nb);
  for (std::uint64_t i = 0; i < nb; ++i) {
    std::string name = detail::read_str(in);
    auto mean = detail::read_vec(in);
    auto var = detail::read_vec(in);
    ck.bn_running_stats.emplace_back(std::move(name),
                                     std::make_pair(std::move(mean), std::move(var)));
  }
  std::int64_t steps = 0;
  detail::read_pod(in, steps);
  ck.adam.step_count = steps;
  detail::read_pod(in, ck.adam.beta1);
  detail::read_pod(in, ck.adam.beta2);
  detail::read_pod(in, ck.adam.epsilon);
  std::uint64_t nm = 0;
  detail::read_pod(in, nm);
  for (std::uint64_t i = 0; i < nm; ++i) {
    ck.adam.first_moment.push_back(detail::read_vec(in));
    ck.adam.second_moment.push_back(detail::read_vec(in));
  }
  std::int32_t epoch = 0, best_epoch = 0;
  detail::read_pod(in, epoch);
  detail::read_pod(in, ck.best_loss);
  detail::read_pod(in, best_epoch);
  std::uint8_t mode = 1;
  detail::read_pod(in, mode);
  ck.epoch = epoch;
  ck.best_epoch = best_epoch;
  ck.flow_uses_batch_stats = mode != 0;
  return ck;
}

// Owns the data, model and optimizer for one training run; one epoch per
// step(), single-threaded by contract.
class TrainSession {
 public:
  explicit TrainSession(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    load_input();
    FdnConfig net = cfg_.depth == 4 ? FdnConfig{} : FdnConfig::for_depth(cfg_.depth);
    model_ = init_model(net, cfg_.seed);
    params_ = model_.parameters();
    adam_ = AdamState::init(params_);
  }

  EpochRecord step() {
    Tensor flow = predict_flow(pair_, model_, true);
    EnergyBreakdown e =
        total_energy(frame1_t_, frame2_t_, flow, cfg_.weights, cfg_.loss_norm);
    if (!std::isfinite(e.total))
      throw TrainingDiverged("non-finite loss at epoch " +
                             std::to_string(epoch_ + 1));

    EpochRecord rec;
    rec.epoch = epoch_ + 1;
    rec.total_loss = e.total;
    rec.data_l1 = e.data_l1;
    rec.data_l2 = e.data_l2;
    rec.tv = e.tv;
    if (gt_) rec.metrics = evaluate_flow(tensor_to_flow(flow), *gt_, gt_mask_);

    // strict improvement; ties keep the earlier epoch
    if (e.total < best_loss_) {
      best_loss_ = e.total;
      best_epoch_ = rec.epoch;
      best_ = snapshot();
      best_.best_loss = best_loss_;
      best_.best_epoch = best_epoch_;
    }

    e.total_tensor.backward();
    adam_step(params_, adam_, cfg_.learning_rate);
    model_.zero_grad();
    epoch_ += 1;
    return rec;
  }

  Checkpoint snapshot() const {
    Checkpoint ck;
    ck.config = cfg_.to_json();
    for (const auto& [name, t] : model_.named_parameters())
      ck.parameters.emplace_back(name, t.data());
    visit_bn([&](const std::string& name, const BnParam& bn) {
      ck.bn_running_stats.emplace_back(
          name, std::make_pair(bn.state.running_mean, bn.state.running_var));
    });
    ck.adam = adam_;
    ck.epoch = epoch_;
    ck.best_loss = best_loss_;
    ck.best_epoch = best_epoch_;
    return ck;
  }

  void restore(const Checkpoint& ck) {
    auto named = model_.named_parameters();
    if (ck.parameters.size() != named.size())
      throw FormatError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (ck.parameters[i].first != named[i].first ||
          ck.parameters[i].second.size() != named[i].second.numel())
        throw FormatError("checkpoint parameter mismatch at " +
                          ck.parameters[i].first);
    }
    if (ck.adam.first_moment.size() != params_.size())
      throw FormatError("checkpoint optimizer state mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (ck.adam.first_moment[i].size() != params_[i].numel() ||
          ck.adam.second_moment[i].size() != params_[i].numel())
        throw FormatError("checkpoint optimizer shape mismatch");

    std::size_t bn_count = 0;
    visit_bn([&](const std::string&, const BnParam&) { ++bn_count; });
    if (ck.bn_running_stats.size() != bn_count)
      throw FormatError("checkpoint batch-norm state mismatch");

    for (std::size_t i = 0; i < named.size(); ++i)
      named[i].second.data() = ck.parameters[i].second;
    std::size_t bi = 0;
    visit_bn_mut([&](const std::string& name, BnParam& bn) {
      if (ck.bn_running_stats[bi].first != name ||
          ck.bn_running_stats[bi].second.first.size() !=
              bn.state.running_mean.size())
        throw FormatError("checkpoint batch-norm mismatch at " + name);
      bn.state.running_mean = ck.bn_running_stats[bi].second.first;
      bn.state.running_var = ck.bn_running_stats[bi].second.second;
      ++bi;
    });
    adam_ = ck.adam;
    epoch_ = ck.epoch;
    best_loss_ = ck.best_loss;
    best_epoch_ = ck.best_epoch;
    best_ = ck;
  }

  // Flow from a checkpoint's parameters, batch-statistics mode (the state
  // in which the best loss was measured). Works on a copy so running stats
  // of the live model stay untouched.
  FlowField flow_from(const Checkpoint& ck) {
    TrainSession scratch(cfg_);
    scratch.restore(ck);
    Tensor flow = predict_flow(scratch.pair_, scratch.model_, true);
    return tensor_to_flow(flow);
  }

  int completed_epochs() const { return epoch_; }
  double best_loss() const { return best_loss_; }
  int best_epoch() const { return best_epoch_; }
  bool has_best() const { return std::isfinite(best_loss_); }
  const Checkpoint& best() const { return best_; }
  const GrayImage& frame1() const { return frame1_; }
  const GrayImage& frame2() const { return frame2_; }
  const std::optional<FlowField>& ground_truth() const { return gt_; }
  const std::vector<std::uint8_t>& gt_mask() const { return gt_mask_; }

 private:
  void load_input() {
    if (cfg_.phantom) {
      PhantomPair p =
          make_phantom_pair(cfg_.phantom->size, cfg_.phantom->resolved_circles());
      frame1_ = std::move(p.frame1);
      frame2_ = std::move(p.frame2);
      gt_ = std::move(p.gt);
    } else {
      frame1_ = load_grayscale(cfg_.frame1_path);
      frame2_ = load_grayscale(cfg_.frame2_path);
      if (!cfg_.gt_path.empty()) gt_ = read_flo(cfg_.gt_path);
      if (gt_ && (gt_->height != frame1_.height || gt_->width != frame1_.width))
        throw FormatError("ground-truth flow size does not match frames");
    }
    if (gt_) gt_mask_ = known_flow_mask(*gt_);
    pair_ = pair_to_tensor(frame1_, frame2_);
    frame1_t_ = image_to_tensor(frame1_);
    frame2_t_ = image_to_tensor(frame2_);
  }

  template <typename F>
  void visit_bn(F&& f) const {
    for (std::size_t i = 0; i < model_.encoder.size(); ++i) {
      f("encoder." + std::to_string(i) + ".bn1", model_.encoder[i].bn1);
      f("encoder." + std::to_string(i) + ".bn2", model_.encoder[i].bn2);
    }
    for (std::size_t i = 0; i < model_.decoder.size(); ++i) {
      f("decoder." + std::to_string(i) + ".bn1", model_.decoder[i].bn1);
      f("decoder." + std::to_string(i) + ".bn2", model_.decoder[i].bn2);
    }
  }

  template <typename F>
  void visit_bn_mut(F&& f) {
    for (std::size_t i = 0; i < model_.encoder.size(); ++i) {
      f("encoder." + std::to_string(i) + ".bn1", model_.encoder[i].bn1);
      f("encoder." + std::to_string(i) + ".bn2", model_.encoder[i].bn2);
    }
    for (std::size_t i = 0; i < model_.decoder.size(); ++i) {
      f("decoder." + std::to_string(i) + ".bn1", model_.decoder[i].bn1);
      f("decoder." + std::to_string(i) + ".bn2", model_.decoder[i].bn2);
    }
  }

  ExperimentConfig cfg_;
  GrayImage frame1_, frame2_;
  std::optional<FlowField> gt_;
  std::vector<std::uint8_t> gt_mask_;
  Tensor pair_, frame1_t_, frame2_t_;
  ModelParameters model_;
  std::vector<Tensor> params_;
  AdamState adam_;
  int epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  Checkpoint best_;
};

struct RunSummary {
  double best_loss = 0.0;
  int best_epoch = 0;
  std::optional<MetricReport> metrics;  // at the best-loss epoch's flow
  std::string output_dir;
};

// One full experiment: train, log every epoch, keep the best checkpoint,
// emit config/log/summary/checkpoint/flow artifacts into output_dir.
inline RunSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.output_dir.empty())
    throw std::invalid_argument("run_experiment: output_dir required");
  std::filesystem::create_directories(cfg.output_dir);
  const std::filesystem::path dir(cfg.output_dir);

  {
    std::ofstream out(dir / "config.json");
    out << cfg.to_json().dump(2) << "\n";
  }

  TrainSession session(cfg);
  std::ofstream log(dir / "log.jsonl");
  try {
    for (int e = 0; e < cfg.epochs; ++e) {
      EpochRecord rec = session.step();
      log << rec.to_json().dump() << "\n";
    }
  } catch (const TrainingDiverged&) {
    log.flush();
    if (session.has_best())
      save_checkpoint((dir / "best.ckpt").string(), session.best());
    throw;
  }
  log.close();

  save_checkpoint((dir / "best.ckpt").string(), session.best());
  FlowField flow = session.flow_from(session.best());
  write_flo((dir / "flow.flo").string(), flow);
  write_png((dir / "flow.png").string(), flow_to_color(flow));

  RunSummary summary;
  summary.best_loss = session.best_loss();
  summary.best_epoch = session.best_epoch();
  summary.output_dir = cfg.output_dir;
  json sj;
  sj["name"] = cfg.name;
  sj["lambda_tv"] = cfg.weights.lambda_tv;
  sj["epochs"] = cfg.epochs;
  sj["best_loss"] = summary.best_loss;
  sj["best_epoch"] = summary.best_epoch;
  if (session.ground_truth()) {
    MetricReport m = evaluate_flow(flow, *session.ground_truth(), session.gt_mask());
    summary.metrics = m;
    sj["aee"] = m.aee;
    sj["sdee"] = m.sdee;
    sj["aae"] = m.aae;
    sj["sdae"] = m.sdae;
    sj["pixel_count"] = m.pixel_count;
  }
  sj["artifacts"] = {{"config", "config.json"},
                     {"log", "log.jsonl"},
                     {"checkpoint", "best.ckpt"},
                     {"flow", "flow.flo"},
                     {"visualization", "flow.png"}};
  std::ofstream out(dir / "summary.json");
  out << sj.dump(2) << "\n";
  return summary;
}

struct SweepRow {
  std::string benchmark;
  double lambda_tv = 0.0;
  bool failed = false;
  std::string error;
  double best_loss = 0.0;
  int best_epoch = 0;
  std::optional<MetricReport> metrics;
};

namespace detail {

inline std::string fmt_g(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string sweep_table_csv(const std::vector<SweepRow>& rows) {
  std::string out = "benchmark,lambda_tv,best_loss,best_epoch,aee,sdee,aae,sdae\n";
  for (const auto& r : rows) {
    out += r.benchmark + "," + detail::fmt_g(r.lambda_tv) + ",";
    if (r.failed) {
      out += ",,,,,\n";
      continue;
    }
    out += detail::fmt_g(r.best_loss) + "," + std::to_string(r.best_epoch) + ",";
    if (r.metrics)
      out += detail::fmt_g(r.metrics->aee) + "," + detail::fmt_g(r.metrics->sdee) +
             "," + detail::fmt_g(r.metrics->aae) + "," +
             detail::fmt_g(r.metrics->sdae);
    else
      out += ",,,";
    out += "\n";
  }
  return out;
}

// Sequential sweep; each run gets its own subdirectory of out_dir and a
// per-run failure does not abort the remaining runs.
inline std::vector<SweepRow> sweep(std::vector<ExperimentConfig> configs,
                                   const std::string& out_dir) {
  if (configs.empty())
    throw std::invalid_argument("sweep: at least one configuration required");
  std::filesystem::create_directories(out_dir);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    ExperimentConfig& cfg = configs[i];
    if (cfg.output_dir.empty()) {
      std::ostringstream sub;
      sub << cfg.name << "_tv" << detail::fmt_g(cfg.weights.lambda_tv);
      cfg.output_dir = (std::filesystem::path(out_dir) / sub.str()).string();
    }
    SweepRow row;
    row.benchmark = cfg.name;
    row.lambda_tv = cfg.weights.lambda_tv;
    try {
      RunSummary s = run_experiment(cfg);  // session state released per run
      row.best_loss = s.best_loss;
      row.best_epoch = s.best_epoch;
      row.metrics = s.metrics;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  std::ofstream table(std::filesystem::path(out_dir) / "results.csv");
  table << sweep_table_csv(rows);
  return rows;
}

}  // namespace fdnflow
