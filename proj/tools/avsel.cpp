// SPDX-License-Identifier: Apache-2.0
// avsel: data generation, training, evaluation, sweeps, heatmap export and
// gradient checks for the batch-gating attention model.
//
// Every subcommand resolves its config as defaults <- --config file <- flags,
// logs it to stderr and writes it into the header of each output file.
// Exit codes: 0 ok, 2 usage / validation / missing input, 3 numerical failure.

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "avsel/avsel.hpp"

namespace {

using namespace avsel;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One config key. The default's JSON type fixes the key's type.
struct Key {
  std::string name;
  json def;
  std::string help;

  std::string flag() const {
    std::string f = "--" + name;
    for (auto &c : f)
      if (c == '_') c = '-';
    return f;
  }
};

std::string quoted(const std::string &s) { return "'" + s + "'"; }

double parse_double(const std::string &text, const std::string &where) {
  if (text == "inf" || text == "INF" || text == "Inf") return kInf;
  double v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size() || std::isnan(v))
    throw UsageError(where + ": expected a number, got " + quoted(text));
  return v;
}

std::uint64_t parse_unsigned(const std::string &text, const std::string &where) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw UsageError(where + ": expected a non-negative integer, got " + quoted(text));
  return v;
}

json parse_flag(const Key &k, const std::string &text) {
  const std::string where = k.flag();
  switch (k.def.type()) {
    case json::value_t::number_unsigned: return parse_unsigned(text, where);
    case json::value_t::number_float: return parse_double(text, where);
    case json::value_t::boolean:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw UsageError(where + ": expected true or false, got " + quoted(text));
    default: return text;
  }
}

json check_config_value(const Key &k, const json &v, const std::string &file) {
  const std::string where = file + ": key " + quoted(k.name);
  switch (k.def.type()) {
    case json::value_t::number_unsigned:
      if (!v.is_number_unsigned())
        throw UsageError(where + " must be a non-negative integer");
      return v;
    case json::value_t::number_float:
      if (v.is_string()) return parse_double(v.get<std::string>(), where);
      if (!v.is_number()) throw UsageError(where + " must be a number");
      return v.get<double>();
    case json::value_t::boolean:
      if (!v.is_boolean()) throw UsageError(where + " must be true or false");
      return v;
    default:
      if (!v.is_string()) throw UsageError(where + " must be a string");
      return v;
  }
}

class Command {
 public:
  Command(CLI::App &app, const std::string &name, const std::string &help,
          std::vector<Key> keys)
      : keys_(std::move(keys)), raw_(keys_.size()) {
    sub_ = app.add_subcommand(name, help);
    sub_->add_option("--config", config_path_, "JSON file with config keys");
    for (std::size_t i = 0; i < keys_.size(); ++i)
      sub_->add_option(keys_[i].flag(), raw_[i], keys_[i].help + " (default " +
                                                     keys_[i].def.dump() + ")");
  }

  bool chosen() const { return sub_->parsed(); }
  const std::string &name() const { return sub_->get_name(); }

  json resolve() const {
    json c = json::object();
    for (const auto &k : keys_) c[k.name] = k.def;
    if (!config_path_.empty()) {
      const json file = read_json(config_path_);
      if (!file.is_object())
        throw UsageError(config_path_ + ": config must be a JSON object");
      for (const auto &[key, value] : file.items()) {
        const Key *k = find(key);
        if (!k)
          throw UsageError(config_path_ + ": unknown config key " + quoted(key) +
                           " for " + name());
        c[key] = check_config_value(*k, value, config_path_);
      }
    }
    for (std::size_t i = 0; i < keys_.size(); ++i)
      if (sub_->get_option(keys_[i].flag())->count() > 0)
        c[keys_[i].name] = parse_flag(keys_[i], raw_[i]);
    return c;
  }

 private:
  const Key *find(const std::string &name) const {
    for (const auto &k : keys_)
      if (k.name == name) return &k;
    return nullptr;
  }

  std::vector<Key> keys_;
  std::vector<std::string> raw_;
  std::string config_path_;
  CLI::App *sub_ = nullptr;
};

// ---------------------------------------------------------------------------
// Config accessors with validation messages that name the flag.

std::string flag_of(const std::string &key) { return Key{key, {}, {}}.flag(); }

std::uint64_t get_u(const json &c, const std::string &key) { return c.at(key).get<std::uint64_t>(); }
double get_d(const json &c, const std::string &key) { return c.at(key).get<double>(); }
std::string get_s(const json &c, const std::string &key) { return c.at(key).get<std::string>(); }

std::uint64_t get_at_least(const json &c, const std::string &key, std::uint64_t lo) {
  const auto v = get_u(c, key);
  if (v < lo)
    throw UsageError(flag_of(key) + " must be >= " + std::to_string(lo) + ", got " +
                     std::to_string(v));
  return v;
}

double get_nonneg(const json &c, const std::string &key, bool allow_inf = false) {
  const double v = get_d(c, key);
  if (!(v >= 0) || (!allow_inf && std::isinf(v)))
    throw UsageError(flag_of(key) + " must be a finite number >= 0, got " + format_number(v));
  return v;
}

std::vector<double> parse_betas(const std::string &list) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    const double b = parse_double(list.substr(start, end - start), "--betas");
    if (!(b >= 0)) throw UsageError("--betas: values must be >= 0, got " + format_number(b));
    out.push_back(b);
    start = end + 1;
  }
  return out;
}

QueryNetConfig query_preset(const std::string &name) {
  if (name == "desk") return QueryNetConfig::desk();
  if (name == "full") return QueryNetConfig::full();
  throw UsageError("--query: expected desk or full, got " + quoted(name));
}

void log_config(const std::string &cmd, const json &c) {
  std::cerr << "avsel " << cmd << ": config " << c.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Feature sources and datasets.

std::vector<Key> world_keys() {
  return {{"world_seed", 7u, "seed of the synthetic world maps"},
          {"latent_dim", 16u, "latent dimension of the synthetic world"},
          {"noise_sigma", 0.0, "visual observation noise"},
          {"visual_dim", 512u, "visual feature dimension (synthetic frontend)"},
          {"frontend", "synthetic", "synthetic or vgg3d"}};
}

std::vector<Key> dataset_keys() {
  return {{"n", 4u, "tracks per sample"},
          {"count", 200u, "samples"},
          {"seed", 1u, "dataset seed"},
          {"mode", "independent", "independent or time-shifted distractors"},
          {"t_min", 32u, "shortest sample in steps"},
          {"t_max", 64u, "longest sample in steps"}};
}

std::vector<Key> join(std::vector<Key> a, const std::vector<Key> &b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

struct Sources {
  std::unique_ptr<SyntheticWorld<double>> world;
  std::unique_ptr<VisualFrontend<double>> frontend;
};

Sources make_sources(const json &c) {
  const auto latent = get_at_least(c, "latent_dim", 1);
  const auto world_seed = get_u(c, "world_seed");
  const double sigma = get_nonneg(c, "noise_sigma");
  const auto dv = get_at_least(c, "visual_dim", 1);
  const std::string fe = get_s(c, "frontend");
  Sources s;
  if (fe == "synthetic") {
    s.world = std::make_unique<SyntheticWorld<double>>(latent, world_seed, kAcousticDim, dv);
    s.frontend = std::make_unique<SyntheticFrontend<double>>(*s.world, sigma);
  } else if (fe == "vgg3d") {
    const auto vc = Vgg3dConfig::desk();
    if (dv != vc.output_dim())
      throw UsageError("--visual-dim must be " + std::to_string(vc.output_dim()) +
                       " with --frontend vgg3d, got " + std::to_string(dv));
    s.world = std::make_unique<SyntheticWorld<double>>(latent, world_seed);
    s.frontend = std::make_unique<Vgg3dFrontend<double>>(
        vc, latent, derive_seed(world_seed, "frontend"));
  } else {
    throw UsageError("--frontend: expected synthetic or vgg3d, got " + quoted(fe));
  }
  return s;
}

MultiTrackDataset<double> make_dataset(const json &c, const Sources &src) {
  const auto n = get_at_least(c, "n", 1);
  const auto count = get_at_least(c, "count", 1);
  const auto seed = get_u(c, "seed");
  const auto t_min = get_at_least(c, "t_min", 1);
  const auto t_max = get_u(c, "t_max");
  if (t_max < t_min || t_max > TrainConfig{}.max_len)
    throw UsageError("--t-max must be in [--t-min, " +
                     std::to_string(TrainConfig{}.max_len) + "], got " +
                     std::to_string(t_max));
  DistractorMode mode;
  try {
    mode = parse_distractor_mode(get_s(c, "mode"));
  } catch (const std::invalid_argument &) {
    throw UsageError("--mode: expected independent or time-shifted, got " +
                     quoted(get_s(c, "mode")));
  }
  if (mode == DistractorMode::independent && n > count)
    throw UsageError("--n must be <= --count in independent mode, got --n " +
                     std::to_string(n) + " with --count " + std::to_string(count));
  if (mode == DistractorMode::time_shifted && n > 1 &&
      (t_min < 2 * kMinShift || t_min - 2 * kMinShift + 1 < n - 1))
    throw UsageError("--t-min " + std::to_string(t_min) +
                     " is too short for time-shifted distractors with --n " +
                     std::to_string(n));
  auto base = generate_base(*src.world, *src.frontend, count, t_min, t_max,
                            derive_seed(seed, "dataset.base"));
  return build_multitrack(std::move(base), n, derive_seed(seed, "dataset.tracks"), mode);
}

// Dataset from --data, or generated from the dataset keys when --data is empty.
MultiTrackDataset<double> dataset_for(const json &c) {
  const std::string dir = get_s(c, "data");
  if (!dir.empty()) return load_dataset<double>(dir);
  const auto src = make_sources(c);
  return make_dataset(c, src);
}

AttentionModel<double> model_for(const json &c) {
  return load_checkpoint<double>(get_s(c, "checkpoint")).model;
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_gen_data(const json &c) {
  const auto src = make_sources(c);
  const auto ds = make_dataset(c, src);
  save_dataset(get_s(c, "out"), ds, c);
  std::cout << "N=" << ds.n << " samples=" << ds.samples.size()
            << " checksum=" << hex64(dataset_checksum(ds)) << "\n";
  return kExitOk;
}

const char *kTraceHeader = "step,lr,loss,diag_accuracy,mean_entropy\n";

std::string trace_row(const TrainLogRow &r) {
  return std::to_string(r.step) + "," + format_number(r.lr) + "," + format_number(r.loss) +
         "," + format_number(r.diag_accuracy) + "," + format_number(r.mean_entropy) + "\n";
}

json trace_json(const std::vector<TrainLogRow> &rows) {
  json out = json::array();
  for (const auto &r : rows)
    out.push_back({r.step, r.lr, r.loss, r.diag_accuracy, r.mean_entropy});
  return out;
}

std::vector<TrainLogRow> trace_from_json(const json &j) {
  std::vector<TrainLogRow> rows;
  for (const auto &e : j)
    rows.push_back({e.at(0).get<std::uint64_t>(), e.at(1).get<double>(),
                    e.at(2).get<double>(), e.at(3).get<double>(), e.at(4).get<double>()});
  return rows;
}

// Keys that change the optimization trajectory; a resumed run must match them.
const std::vector<std::string> kTrajectoryKeys = {
    "b", "t", "seed", "world_seed", "latent_dim", "noise_sigma", "visual_dim", "frontend",
    "query", "schedule_scale", "peak_lr", "grad_clip", "weight_decay"};

int cmd_train(json c) {
  TrainConfig tc;
  tc.batch = get_at_least(c, "b", 2);
  tc.seq_len = get_at_least(c, "t", 1);
  if (tc.seq_len > tc.max_len)
    throw UsageError("--t must be <= " + std::to_string(tc.max_len) + ", got " +
                     std::to_string(tc.seq_len));
  tc.steps = get_u(c, "steps");
  tc.seed = get_u(c, "seed");
  const double scale = get_d(c, "schedule_scale");
  if (!(scale > 0) || std::isinf(scale))
    throw UsageError("--schedule-scale must be a finite number > 0, got " +
                     format_number(scale));
  const double peak = get_nonneg(c, "peak_lr");
  try {
    tc.schedule = LrSchedule::scaled(scale, peak);
  } catch (const std::invalid_argument &e) {
    throw UsageError(std::string("--schedule-scale: ") + e.what());
  }
  tc.grad_clip = get_nonneg(c, "grad_clip");
  tc.adam.weight_decay = get_nonneg(c, "weight_decay");
  tc.eval_batches = get_u(c, "eval_batches");
  const auto every = get_u(c, "checkpoint_every");
  const QueryNetConfig qc = query_preset(get_s(c, "query"));
  const std::string out = get_s(c, "out");
  if (out.empty()) throw UsageError("--out must not be empty");
  if (get_s(c, "log").empty()) c["log"] = out + "_log.csv";
  const std::string log_path = get_s(c, "log");
  const std::string resume = get_s(c, "resume");
  log_config("train", c);

  const auto src = make_sources(c);
  PairSource<double> pairs(*src.world, *src.frontend, tc.seed);
  const auto frozen_before = parameter_checksum(src.frontend->parameters());

  std::vector<TrainLogRow> trace;
  TrainState<double> state{AttentionModel<double>(qc, src.world->visual_dim(), tc.seed), {}, 0};
  if (!resume.empty()) {
    json saved;
    state = load_checkpoint<double>(resume, &saved);
    const json &run = saved.at("run");
    for (const auto &k : kTrajectoryKeys)
      if (run.at(k) != c.at(k))
        throw UsageError("--resume: checkpoint " + resume + " was trained with " + k + "=" +
                         run.at(k).dump() + ", this run has " + c.at(k).dump());
    trace = trace_from_json(saved.at("trace"));
    if (state.step > tc.steps)
      throw UsageError("--steps " + std::to_string(tc.steps) + " is behind the checkpoint at step " +
                       std::to_string(state.step));
  }

  std::uint64_t good_step = state.step;
  auto save = [&](const TrainState<double> &st) {
    for (const auto *p : st.model.parameters())
      if (!p->value.all_finite())
        throw NumericalError("training: non-finite parameter " + p->name + " after step " +
                             std::to_string(st.step));
    save_checkpoint(out, st, {{"run", c}, {"trace", trace_json(trace)}});
    good_step = st.step;
  };
  auto write_log = [&] {
    std::string s = config_comment(c) + kTraceHeader;
    for (const auto &r : trace) s += trace_row(r);
    write_text(log_path, s);
  };
  if (resume.empty() || resume != out) save(state);

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  try {
    report = train_attention<double>(tc, pairs, state, [&](const TrainLogRow &row,
                                                          const TrainState<double> &st) {
      trace.push_back(row);
      if (every > 0 && st.step % every == 0 && st.step < tc.steps) {
        save(st);
        std::cerr << "avsel train: step " << st.step << " loss " << format_number(row.loss)
                  << " lr " << format_number(row.lr) << "\n";
      }
    });
  } catch (const NumericalError &e) {
    write_log();
    std::cerr << "avsel train: numerical failure: " << e.what()
              << "\navsel train: last good checkpoint " << out << " (step " << good_step
              << ")\n";
    return kExitNumerical;
  }
  save(state);
  write_log();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (parameter_checksum(src.frontend->parameters()) != frozen_before)
    throw std::logic_error("frozen frontend parameters changed during training");

  std::cerr << "avsel train: " << report.log.size() << " steps in " << secs << " s\n";
  std::cout << "steps=" << state.step << " final_loss="
            << (trace.empty() ? std::string("na") : format_number(trace.back().loss))
            << " heldout_accuracy=" << format_number(report.final_accuracy)
            << " checksum=" << hex64(report.param_checksum) << "\n";
  return kExitOk;
}

int cmd_eval(const json &c) {
  const double beta = get_nonneg(c, "beta", true);
  const auto model = model_for(c);
  const auto ds = dataset_for(c);
  const auto report = evaluate_selection(model, ds, beta);
  write_text(get_s(c, "out"), eval_csv(report, c));
  std::cout << eval_summary(report) << "\n";
  return kExitOk;
}

int cmd_sweep(const json &c) {
  const auto betas = parse_betas(get_s(c, "betas"));
  const auto model = model_for(c);
  const auto ds = dataset_for(c);
  const auto curve = sweep_beta(model, ds, betas);
  write_text(get_s(c, "out"), sweep_csv(curve, c));
  for (const auto &r : curve) std::cout << eval_summary(r) << "\n";
  return kExitOk;
}

int cmd_export(const json &c) {
  const double beta = get_nonneg(c, "beta", true);
  const auto model = model_for(c);
  const auto ds = dataset_for(c);
  const auto k = get_u(c, "sample");
  if (k >= ds.samples.size())
    throw UsageError("--sample must be < " + std::to_string(ds.samples.size()) + ", got " +
                     std::to_string(k));
  const std::string stem = get_s(c, "out");
  export_attention(model, materialize(ds, k), beta, stem, c);
  std::cout << "wrote " << stem << ".csv " << stem << ".pgm (truth track "
            << ds.samples[k].truth_index << ")\n";
  return kExitOk;
}

constexpr double kGradTolerance = 1e-4;

int cmd_gradcheck(const json &c) {
  GradCheckConfig g;
  g.batch = get_at_least(c, "b", 2);
  g.steps = get_at_least(c, "t", 1);
  g.visual_dim = get_at_least(c, "visual_dim", 1);
  g.coords_per_tensor = get_at_least(c, "coords", 1);
  g.h = get_d(c, "fd_step");
  if (!(g.h > 0) || std::isinf(g.h))
    throw UsageError("--fd-step must be a finite number > 0, got " + format_number(g.h));
  const auto seed = get_u(c, "seed");
  const auto instances = get_at_least(c, "instances", 1);
  double worst = 0;
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t i = 0; i < instances; ++i) {
    g.seed = seed + i;
    const auto r = gradient_check(g);
    checked += r.checked;
    skipped += r.skipped;
    std::cout << "seed=" << g.seed << " max_rel_err=" << format_number(r.max_rel_err)
              << " checked=" << r.checked << " skipped=" << r.skipped
              << " worst=" << r.worst << "\n";
    worst = std::max(worst, r.max_rel_err);
  }
  const bool ok = worst < kGradTolerance;
  std::cout << (ok ? "max_rel_err < 1e-4" : "max_rel_err >= 1e-4")
            << " (max_rel_err=" << format_number(worst) << ", checked=" << checked
            << ", skipped=" << skipped << ")\n";
  return ok ? kExitOk : kExitNumerical;
}

int cmd_features(const json &c) {
  const std::string wav = get_s(c, "wav");
  if (wav.empty()) throw UsageError("--wav is required");
  const auto feats = acoustic_features(read_wav(wav));
  write_tensor(get_s(c, "out"), feats, DType::f64, {{"config", c}});
  std::cout << "steps=" << feats.dim(0) << " dim=" << feats.dim(1) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"avsel: audio-visual track selection with batch-gating attention"};
  app.require_subcommand(1);

  const std::vector<Key> eval_common = {
      {"checkpoint", "checkpoint", "checkpoint directory"},
      {"data", "", "dataset directory (empty: generate from the dataset keys)"}};

  std::deque<Command> cmds;  // options bind to member addresses
  cmds.emplace_back(app, "gen-data", "write a multi-track evaluation dataset",
                    join(join(dataset_keys(), world_keys()),
                         {{"out", "data", "output directory"}}));
  cmds.emplace_back(
      app, "train", "train the attention model on matched pairs",
      join(world_keys(),
           {{"steps", 2000u, "total optimizer steps"},
            {"b", 8u, "batch size (competing tracks)"},
            {"t", 32u, "sequence length in steps"},
            {"seed", 1u, "model and batch seed"},
            {"query", "desk", "query net preset: desk or full"},
            {"schedule_scale", 100.0, "divide the reference schedule step counts by this"},
            {"peak_lr", 1e-3, "peak learning rate"},
            {"grad_clip", 0.0, "global gradient norm clip, 0 = off"},
            {"weight_decay", 0.0, "L2 weight decay, 0 = off"},
            {"eval_batches", 16u, "held-out batches for the final accuracy"},
            {"checkpoint_every", 100u, "save every k steps, 0 = only at the end"},
            {"out", "checkpoint", "checkpoint directory"},
            {"log", "", "CSV log path (default <out>_log.csv)"},
            {"resume", "", "checkpoint directory to resume from"}}));
  cmds.emplace_back(app, "eval", "selection accuracy at one beta",
                    join(join(join(eval_common, dataset_keys()), world_keys()),
                         {{"beta", 1.0, "inverse temperature"},
                          {"out", "eval.csv", "report CSV"}}));
  cmds.emplace_back(app, "sweep", "selection accuracy over several betas",
                    join(join(join(eval_common, dataset_keys()), world_keys()),
                         {{"betas", "0,0.5,1,2,inf", "comma-separated betas"},
                          {"out", "sweep.csv", "curve CSV"}}));
  cmds.emplace_back(app, "export", "attention heatmap (CSV and PGM) for one sample",
                    join(join(join(eval_common, dataset_keys()), world_keys()),
                         {{"sample", 0u, "sample index"},
                          {"beta", 1.0, "inverse temperature"},
                          {"out", "attention", "output stem"}}));
  cmds.emplace_back(app, "gradcheck", "analytic vs finite-difference gradients",
                    std::vector<Key>{{"seed", 1u, "first instance seed"},
                                     {"instances", 1u, "random instances"},
                                     {"b", 3u, "batch size"},
                                     {"t", 4u, "sequence length"},
                                     {"visual_dim", 8u, "visual feature dimension"},
                                     {"coords", 16u, "checked coordinates per tensor"},
                                     {"fd_step", 1e-5, "central difference step"}});
  cmds.emplace_back(app, "features", "acoustic features of a 16 kHz mono WAV file",
                    std::vector<Key>{{"wav", "", "input WAV"},
                                     {"out", "features.bin", "output tensor"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << "avsel: " << e.what() << "\n";
    return kExitUsage;
  }

  for (const auto &cmd : cmds) {
    if (!cmd.chosen()) continue;
    const std::string &name = cmd.name();
    try {
      const json c = cmd.resolve();
      if (name == "train") return cmd_train(c);
      log_config(name, c);
      if (name == "gen-data") return cmd_gen_data(c);
      if (name == "eval") return cmd_eval(c);
      if (name == "sweep") return cmd_sweep(c);
      if (name == "export") return cmd_export(c);
      if (name == "gradcheck") return cmd_gradcheck(c);
      if (name == "features") return cmd_features(c);
    } catch (const UsageError &e) {
      std::cerr << "avsel " << name << ": " << e.what() << "\n";
      return kExitUsage;
    } catch (const IoError &e) {
      std::cerr << "avsel " << name << ": " << e.what() << "\n";
      return kExitUsage;
    } catch (const NumericalError &e) {
      std::cerr << "avsel " << name << ": numerical failure: " << e.what() << "\n";
      return kExitNumerical;
    } catch (const json::exception &e) {
      std::cerr << "avsel " << name << ": malformed input: " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::invalid_argument &e) {
      std::cerr << "avsel " << name << ": " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::exception &e) {
      std::cerr << "avsel " << name << ": " << e.what() << "\n";
      return kExitFailure;
    }
  }
  return kExitUsage;
}
