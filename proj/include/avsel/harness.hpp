// SPDX-License-Identifier: Apache-2.0
/**
 * @file   harness.hpp
 * @brief  Multi-track evaluation sets, selection metrics, temperature sweeps
 *         and attention heatmap export.
 *
 * A dataset keeps its base matched pairs once; every sample is a list of N
 * track references (source pair, cyclic offset) into them, one of which is
 * the sample's own matched track at offset 0. A reference reads
 * source.visual[(offset + t) mod T_source] for t in [0, T), which crops a
 * longer source (offset <= T_source - T) and loops a shorter one.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "avsel/attention.hpp"
#include "avsel/frontend.hpp"
#include "avsel/tensor_io.hpp"
#include "avsel/training.hpp"

namespace avsel {

template <class Real = double>
struct MatchedPair {
  BasicTensor<Real> acoustic;  // [T, 240]
  BasicTensor<Real> visual;    // [T, Dv]

  std::size_t steps() const { return acoustic.dim(0); }
};

/// Base pairs with lengths uniform in [t_min, t_max]; pair i depends only on
/// (seed, i) and the world/frontend.
template <class Real>
std::vector<MatchedPair<Real>> generate_base(const SyntheticWorld<Real> &world,
                                             const VisualFrontend<Real> &frontend,
                                             std::size_t count, std::size_t t_min,
                                             std::size_t t_max, std::uint64_t seed) {
  if (t_min == 0 || t_min > t_max)
    throw std::invalid_argument("generate_base: need 1 <= t_min <= t_max");
  std::vector<MatchedPair<Real>> base;
  base.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SeededRng rng(derive_seed(seed, "base", i));
    const std::size_t T = t_min + rng.index(t_max - t_min + 1);
    const auto z = world.sample_latent(1, T, rng);
    auto a = world.acoustic(z);
    auto v = frontend.features(z, rng);
    base.push_back({a.reshaped({T, a.dim(2)}), v.reshaped({T, v.dim(2)})});
  }
  return base;
}

struct TrackRef {
  std::size_t source = 0;
  std::size_t offset = 0;

  friend bool operator==(const TrackRef &, const TrackRef &) = default;
};

struct SampleRef {
  std::size_t base = 0;  // pair providing the acoustic stream
  std::size_t truth_index = 0;
  std::vector<TrackRef> tracks;

  friend bool operator==(const SampleRef &, const SampleRef &) = default;
};

template <class Real = double>
struct MultiTrackDataset {
  std::vector<MatchedPair<Real>> base;
  std::vector<SampleRef> samples;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  DistractorMode mode = DistractorMode::independent;

  std::size_t visual_dim() const { return base.front().visual.dim(1); }
};

/// Materialized sample: the acoustic stream and its N candidate tracks.
template <class Real = double>
struct MultiTrackSample {
  BasicTensor<Real> acoustic;  // [T, 240]
  BasicTensor<Real> tracks;    // [N, T, Dv]
  std::size_t truth_index = 0;
};

/**
 * Independent mode: N-1 distractors are other samples' matched tracks, drawn
 * uniformly without replacement, randomly cropped or looped to T.
 * Time-shifted mode: distractors are the sample's own track cyclically
 * shifted by distinct offsets in [34, T-34] (every face speaks the same
 * content, at least one second out of sync).
 * The truth position is uniform in [0, N).
 */
template <class Real>
MultiTrackDataset<Real> build_multitrack(std::vector<MatchedPair<Real>> base,
                                         std::size_t n, std::uint64_t seed,
                                         DistractorMode mode = DistractorMode::independent) {
  if (n == 0) throw std::invalid_argument("build_multitrack: N must be >= 1");
  if (base.empty()) throw std::invalid_argument("build_multitrack: empty base");
  if (mode == DistractorMode::independent && base.size() < n)
    throw std::invalid_argument("build_multitrack: base of " +
                                std::to_string(base.size()) +
                                " pairs is too small for N = " + std::to_string(n));
  MultiTrackDataset<Real> ds;
  ds.n = n;
  ds.seed = seed;
  ds.mode = mode;
  for (std::size_t i = 0; i < base.size(); ++i) {
    SeededRng rng(derive_seed(seed, "multitrack", i));
    const std::size_t T = base[i].steps();
    std::vector<TrackRef> distractors;
    if (mode == DistractorMode::independent) {
      std::vector<std::size_t> pool;
      for (std::size_t j = 0; j < base.size(); ++j)
        if (j != i) pool.push_back(j);
      for (std::size_t d = 0; d + 1 < n; ++d) {
        std::swap(pool[d], pool[d + rng.index(pool.size() - d)]);
        const std::size_t src = pool[d], Ts = base[src].steps();
        distractors.push_back({src, Ts > T ? rng.index(Ts - T + 1) : 0});
      }
    } else if (n > 1) {
      if (T < 2 * kMinShift || T - 2 * kMinShift + 1 < n - 1)
        throw std::invalid_argument(
            "build_multitrack: time-shifted mode needs T >= 68 with N-1 distinct "
            "shifts, sample " + std::to_string(i) + " has T = " + std::to_string(T));
      std::vector<std::size_t> shifts;
      for (std::size_t s = kMinShift; s + kMinShift <= T; ++s) shifts.push_back(s);
      for (std::size_t d = 0; d + 1 < n; ++d) {
        std::swap(shifts[d], shifts[d + rng.index(shifts.size() - d)]);
        distractors.push_back({i, shifts[d]});
      }
    }
    SampleRef s;
    s.base = i;
    s.truth_index = rng.index(n);
    s.tracks = std::move(distractors);
    s.tracks.insert(s.tracks.begin() + std::ptrdiff_t(s.truth_index), TrackRef{i, 0});
    ds.samples.push_back(std::move(s));
  }
  ds.base = std::move(base);
  return ds;
}

template <class Real>
MultiTrackSample<Real> materialize(const MultiTrackDataset<Real> &ds, std::size_t k) {
  const SampleRef &s = ds.samples.at(k);
  const auto &pair = ds.base.at(s.base);
  const std::size_t T = pair.steps(), Dv = pair.visual.dim(1);
  MultiTrackSample<Real> out{pair.acoustic, BasicTensor<Real>({s.tracks.size(), T, Dv}),
                             s.truth_index};
  for (std::size_t n = 0; n < s.tracks.size(); ++n) {
    const auto &src = ds.base.at(s.tracks[n].source).visual;
    const std::size_t Ts = src.dim(0);
    for (std::size_t t = 0; t < T; ++t)
      std::copy_n(src.ptr() + ((s.tracks[n].offset + t) % Ts) * Dv, Dv,
                  out.tracks.ptr() + (n * T + t) * Dv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Selection metrics.

struct SampleEval {
  std::size_t steps = 0;
  std::size_t hits = 0;  // frames whose argmax weight is the truth track
  std::size_t vote = 0;  // majority-vote track (lower index on ties)
  bool utterance_correct = false;
  double entropy_sum = 0, ce_sum = 0;

  double frame_accuracy() const { return double(hits) / double(steps); }

  friend bool operator==(const SampleEval &, const SampleEval &) = default;
};

struct EvalReport {
  std::size_t n = 0;
  double beta = 1.0;
  std::vector<SampleEval> samples;
  double frame_accuracy = 0, utterance_accuracy = 0, mean_entropy = 0, mean_ce = 0;

  friend bool operator==(const EvalReport &, const EvalReport &) = default;
};

/// Per-sample metrics from attention weights alpha [T, N] (or [1, T, N]).
template <class Real>
SampleEval score_sample(const BasicTensor<Real> &alpha, std::size_t truth) {
  const std::size_t N = alpha.shape().back(), T = alpha.size() / N;
  SampleEval e;
  e.steps = T;
  const auto arg = row_argmax(alpha);
  std::vector<std::size_t> votes(N, 0);
  for (std::size_t t = 0; t < T; ++t) {
    e.hits += arg[t] == truth;
    ++votes[arg[t]];
    double h = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const double p = alpha[t * N + k];
      if (p > 0) h -= p * std::log(p);
    }
    e.entropy_sum += h;
    e.ce_sum -= std::log(std::max(double(alpha[t * N + truth]), kLogFloor));
  }
  for (std::size_t k = 1; k < N; ++k)
    if (votes[k] > votes[e.vote]) e.vote = k;
  e.utterance_correct = e.vote == truth;
  return e;
}

inline EvalReport summarize(std::size_t n, double beta, std::vector<SampleEval> samples) {
  EvalReport r;
  r.n = n;
  r.beta = beta;
  std::size_t frames = 0, hits = 0, utt = 0;
  double h = 0, ce = 0;
  for (const auto &s : samples) {
    frames += s.steps;
    hits += s.hits;
    utt += s.utterance_correct;
    h += s.entropy_sum;
    ce += s.ce_sum;
  }
  if (frames) {
    r.frame_accuracy = double(hits) / double(frames);
    r.mean_entropy = h / double(frames);
    r.mean_ce = ce / double(frames);
    r.utterance_accuracy = double(utt) / double(samples.size());
  }
  r.samples = std::move(samples);
  return r;
}

/// Inference with one acoustic query (B = 1) against the sample's N tracks.
template <class Real>
BasicTensor<Real> sample_attention(const AttentionModel<Real> &model,
                                   const MultiTrackSample<Real> &s, double beta) {
  const std::size_t T = s.acoustic.dim(0);
  if (s.tracks.dim(1) != T)
    throw ShapeError("evaluate_selection: acoustic T = " + std::to_string(T) +
                     " but tracks T = " + std::to_string(s.tracks.dim(1)));
  const auto a = s.acoustic.reshaped({1, T, s.acoustic.dim(1)});
  const auto alpha = attention_weights(model.scores(a, s.tracks), beta);
  return alpha.reshaped({T, s.tracks.dim(0)});
}

template <class Real>
EvalReport evaluate_selection(const AttentionModel<Real> &model,
                              const MultiTrackDataset<Real> &ds, double beta) {
  if (ds.visual_dim() != model.visual_dim())
    throw ShapeError("evaluate_selection: dataset visual dim " +
                     std::to_string(ds.visual_dim()) + " != model visual dim " +
                     std::to_string(model.visual_dim()));
  std::vector<SampleEval> out;
  out.reserve(ds.samples.size());
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    const auto s = materialize(ds, k);
    out.push_back(score_sample(sample_attention(model, s, beta), s.truth_index));
  }
  return summarize(ds.n, beta, std::move(out));
}

template <class Real>
std::vector<EvalReport> sweep_beta(const AttentionModel<Real> &model,
                                   const MultiTrackDataset<Real> &ds,
                                   const std::vector<double> &betas) {
  for (double b : betas)
    if (!(b >= 0)) throw std::invalid_argument("sweep_beta: betas must be >= 0");
  std::vector<EvalReport> out;
  for (double b : betas) out.push_back(evaluate_selection(model, ds, b));
  return out;
}

// ---------------------------------------------------------------------------
// Report and heatmap files. Every file leads with the resolved config.

inline std::string config_comment(const json &config) {
  return "# config: " + config.dump() + "\n";
}

inline std::string eval_csv(const EvalReport &r, const json &config) {
  std::string s = config_comment(config);
  s += "sample,steps,frame_accuracy,utterance_vote,utterance_correct,mean_entropy,mean_ce\n";
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto &e = r.samples[i];
    s += std::to_string(i) + "," + std::to_string(e.steps) + "," +
         format_number(e.frame_accuracy()) + "," + std::to_string(e.vote) + "," +
         (e.utterance_correct ? "1" : "0") + "," +
         format_number(e.entropy_sum / double(e.steps)) + "," +
         format_number(e.ce_sum / double(e.steps)) + "\n";
  }
  return s;
}

inline std::string eval_summary(const EvalReport &r) {
  return "N=" + std::to_string(r.n) + " beta=" + format_number(r.beta) +
         " samples=" + std::to_string(r.samples.size()) +
         " frame_accuracy=" + format_number(r.frame_accuracy) +
         " utterance_accuracy=" + format_number(r.utterance_accuracy) +
         " mean_entropy=" + format_number(r.mean_entropy) +
         " mean_ce=" + format_number(r.mean_ce);
}

inline std::string sweep_csv(const std::vector<EvalReport> &curve, const json &config) {
  std::string s = config_comment(config);
  s += "beta,frame_accuracy,utterance_accuracy,mean_entropy,mean_ce\n";
  for (const auto &r : curve)
    s += format_number(r.beta) + "," + format_number(r.frame_accuracy) + "," +
         format_number(r.utterance_accuracy) + "," + format_number(r.mean_entropy) +
         "," + format_number(r.mean_ce) + "\n";
  return s;
}

/// T x N grid, one row per time step.
template <class Real>
std::string attention_csv(const BasicTensor<Real> &alpha, const json &config) {
  expect_rank(alpha, 2, "attention_csv alpha");
  const std::size_t T = alpha.dim(0), N = alpha.dim(1);
  std::string s = config_comment(config) + "t";
  for (std::size_t k = 0; k < N; ++k) s += ",track_" + std::to_string(k);
  s += "\n";
  for (std::size_t t = 0; t < T; ++t) {
    s += std::to_string(t);
    for (std::size_t k = 0; k < N; ++k) s += "," + format_number(alpha[t * N + k]);
    s += "\n";
  }
  return s;
}

/// Pixel value for a weight: floor(a * 255 + 0.5), clamped to [0, 255].
inline unsigned char weight_to_pixel(double a) {
  return static_cast<unsigned char>(std::clamp(std::floor(a * 255.0 + 0.5), 0.0, 255.0));
}

/// Binary P5 image, width N (tracks), height T (time).
template <class Real>
std::string attention_pgm(const BasicTensor<Real> &alpha, const json &config) {
  expect_rank(alpha, 2, "attention_pgm alpha");
  const std::size_t T = alpha.dim(0), N = alpha.dim(1);
  std::string s = "P5\n" + config_comment(config) + std::to_string(N) + " " +
                  std::to_string(T) + "\n255\n";
  for (std::size_t i = 0; i < T * N; ++i)
    s.push_back(static_cast<char>(weight_to_pixel(alpha[i])));
  return s;
}

/// Writes <stem>.csv and <stem>.pgm for one sample.
template <class Real>
void export_attention(const AttentionModel<Real> &model,
                      const MultiTrackSample<Real> &sample, double beta,
                      const fs::path &stem, const json &config = json::object()) {
  const auto alpha = sample_attention(model, sample, beta);
  write_text(stem.string() + ".csv", attention_csv(alpha, config));
  write_text(stem.string() + ".pgm", attention_pgm(alpha, config));
}

// ---------------------------------------------------------------------------
// Dataset files: <dir>/manifest.json, acoustic.bin [sum T, 240],
// visual.bin [sum T, Dv].

template <class Real>
std::uint64_t dataset_checksum(const MultiTrackDataset<Real> &ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto &p : ds.base) h = checksum(p.visual, checksum(p.acoustic, h));
  for (const auto &s : ds.samples) {
    const std::uint64_t head[3] = {s.base, s.truth_index, s.tracks.size()};
    h = fnv1a64(head, sizeof head, h);
    for (const auto &r : s.tracks) {
      const std::uint64_t ref[2] = {r.source, r.offset};
      h = fnv1a64(ref, sizeof ref, h);
    }
  }
  return fnv1a64(&ds.n, sizeof ds.n, h);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <class Real>
void save_dataset(const fs::path &dir, const MultiTrackDataset<Real> &ds,
                  const json &config = json::object()) {
  fs::create_directories(dir);
  std::size_t total = 0;
  json lengths = json::array();
  for (const auto &p : ds.base) {
    total += p.steps();
    lengths.push_back(p.steps());
  }
  const std::size_t Da = ds.base.front().acoustic.dim(1), Dv = ds.visual_dim();
  BasicTensor<Real> a({total, Da}), v({total, Dv});
  std::size_t row = 0;
  for (const auto &p : ds.base) {
    std::copy_n(p.acoustic.ptr(), p.acoustic.size(), a.ptr() + row * Da);
    std::copy_n(p.visual.ptr(), p.visual.size(), v.ptr() + row * Dv);
    row += p.steps();
  }
  write_tensor(dir / "acoustic.bin", a, DType::f64, {{"config", config}});
  write_tensor(dir / "visual.bin", v, DType::f64, {{"config", config}});
  json samples = json::array();
  for (const auto &s : ds.samples) {
    json refs = json::array();
    for (const auto &r : s.tracks) refs.push_back({r.source, r.offset});
    samples.push_back({{"base", s.base}, {"truth_index", s.truth_index}, {"tracks", refs}});
  }
  write_json(dir / "manifest.json",
             {{"format", "avsel-multitrack-1"},
              {"config", config},
              {"n", ds.n},
              {"seed", ds.seed},
              {"mode", distractor_mode_name(ds.mode)},
              {"count", ds.samples.size()},
              {"lengths", lengths},
              {"checksum", hex64(dataset_checksum(ds))},
              {"samples", samples}});
}

template <class Real = double>
MultiTrackDataset<Real> load_dataset(const fs::path &dir, json *config_out = nullptr) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("dataset manifest not found: " + mpath.string());
  const json m = read_json(mpath);
  MultiTrackDataset<Real> ds;
  try {
    ds.n = m.at("n").get<std::size_t>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.mode = parse_distractor_mode(m.at("mode").get<std::string>());
    const auto a = read_tensor<Real>(dir / "acoustic.bin");
    const auto v = read_tensor<Real>(dir / "visual.bin");
    const std::size_t Da = a.dim(1), Dv = v.dim(1);
    std::size_t row = 0;
    for (std::size_t T : m.at("lengths").get<std::vector<std::size_t>>()) {
      if (row + T > a.dim(0) || row + T > v.dim(0))
        throw IoError("dataset tensors shorter than the manifest lengths");
      MatchedPair<Real> p{BasicTensor<Real>({T, Da}), BasicTensor<Real>({T, Dv})};
      std::copy_n(a.ptr() + row * Da, T * Da, p.acoustic.ptr());
      std::copy_n(v.ptr() + row * Dv, T * Dv, p.visual.ptr());
      ds.base.push_back(std::move(p));
      row += T;
    }
    for (const auto &js : m.at("samples")) {
      SampleRef s;
      s.base = js.at("base").get<std::size_t>();
      s.truth_index = js.at("truth_index").get<std::size_t>();
      for (const auto &r : js.at("tracks"))
        s.tracks.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()});
      if (s.base >= ds.base.size() || s.tracks.size() != ds.n || s.truth_index >= ds.n)
        throw IoError("dataset manifest has an inconsistent sample entry");
      for (const auto &r : s.tracks)
        if (r.source >= ds.base.size())
          throw IoError("dataset manifest references a missing source pair");
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception &e) {
    throw IoError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }
  if (m.value("checksum", "") != hex64(dataset_checksum(ds)))
    throw IoError("dataset checksum mismatch in " + mpath.string());
  if (config_out) *config_out = m.value("config", json::object());
  return ds;
}

}  // namespace avsel
