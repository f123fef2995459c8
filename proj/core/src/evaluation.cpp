#include "lpr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace lpr {
namespace {

torch::Tensor as_vector(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).cpu().reshape({-1}); }

double pairwise_sum_range(const double* v, size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const size_t half = n / 2;
  return pairwise_sum_range(v, half) + pairwise_sum_range(v + half, n - half);
}

double mean_of(const std::vector<double>& v) { return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size()); }

}  // namespace

double cosine_similarity(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = as_vector(a), y = as_vector(b);
  if (x.numel() != y.numel()) throw ShapeError("cosine_similarity: descriptor sizes differ");
  const double dot = x.dot(y).item<double>();
  const double norms = x.norm().item<double>() * y.norm().item<double>();
  return dot / std::max(norms, kCosineEps);
}

double pairwise_sum(const std::vector<double>& values) { return pairwise_sum_range(values.data(), values.size()); }

double identity_error_from_descriptors(const std::vector<torch::Tensor>& refs,
                                       const std::vector<std::vector<std::vector<torch::Tensor>>>& outputs) {
  const size_t m = refs.size();
  if (m < 2) throw std::invalid_argument("identity_error: at least two models are required");
  if (outputs.size() != m) throw std::invalid_argument("identity_error: one output table per model expected");
  std::vector<double> terms;
  for (size_t k = 0; k < m; ++k) {
    if (outputs[k].size() != m) throw std::invalid_argument("identity_error: one driver set per person expected");
    for (size_t i = 0; i < m; ++i) {
      if (i == k) continue;
      for (const auto& d : outputs[k][i]) terms.push_back(1.0 - lpr::cosine_similarity(d, refs[k]));
    }
  }
  if (terms.empty()) throw std::invalid_argument("identity_error: no driver frames");
  return mean_of(terms);
}

double identity_error(const std::vector<ReenactmentSubject>& subjects, FaceEmbedder& embedder) {
  const size_t m = subjects.size();
  std::vector<torch::Tensor> refs;
  for (const auto& s : subjects) {
    if (s.reference_frames.empty()) throw std::invalid_argument("identity_error: subject without reference frames");
    auto sum = torch::zeros({embedder.dim()}, torch::kFloat64);
    for (const auto& f : s.reference_frames) sum += as_vector(embedder.embed(f));
    refs.push_back(sum / static_cast<double>(s.reference_frames.size()));
  }
  std::vector<std::vector<std::vector<torch::Tensor>>> outputs(m, std::vector<std::vector<torch::Tensor>>(m));
  torch::NoGradGuard no_grad;
  for (size_t k = 0; k < m; ++k) {
    for (size_t i = 0; i < m; ++i) {
      if (i == k) continue;
      for (const auto& driver : subjects[i].reference_frames) {
        outputs[k][i].push_back(embedder.embed(subjects[k].model->reenact(driver)));
      }
    }
  }
  return identity_error_from_descriptors(refs, outputs);
}

std::optional<double> normalized_landmark_distance(const torch::Tensor& predicted, const torch::Tensor& reference,
                                                   std::pair<int64_t, int64_t> eyes) {
  auto p = predicted.detach().to(torch::kFloat64).cpu();
  auto r = reference.detach().to(torch::kFloat64).cpu();
  if (p.sizes() != r.sizes() || p.dim() != 2 || p.size(1) != 2) {
    throw ShapeError("landmark sets must both be P x 2 with equal P");
  }
  const double iod = (r[eyes.first] - r[eyes.second]).norm().item<double>();
  if (!(iod > 0.0)) return std::nullopt;
  return (p - r).norm(2, {1}).mean().item<double>() / iod;
}

PoseErrorResult pose_error(const std::vector<ReenactmentSubject>& subjects, LandmarkDetector& detector) {
  PoseErrorResult out;
  std::vector<double> terms;
  torch::NoGradGuard no_grad;
  for (const auto& s : subjects) {
    for (const auto& frame : s.holdout_frames) {
      auto d = normalized_landmark_distance(detector.detect(s.model->reenact(frame)), detector.detect(frame),
                                            detector.eye_indices());
      if (!d) {
        ++out.skipped;
        continue;
      }
      terms.push_back(*d);
    }
  }
  out.evaluated = static_cast<int64_t>(terms.size());
  out.value = mean_of(terms);
  return out;
}

// --- retrieval ------------------------------------------------------------------

std::map<std::string, std::vector<size_t>> RetrievalManifest::groups() const {
  std::map<std::string, std::vector<size_t>> g;
  for (size_t i = 0; i < items.size(); ++i) g[items[i].group].push_back(i);
  return g;
}

RetrievalManifest RetrievalManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manifest " + path.string());
  RetrievalManifest m;
  std::string line;
  size_t lineno = 0, dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    RetrievalItem item;
    if (!std::getline(ss, item.group, '\t') || !std::getline(ss, item.label, '\t')) {
      throw Error(fmt::format("{}:{}: expected group, label, descriptor", path.string(), lineno));
    }
    std::string cell;
    while (std::getline(ss, cell, '\t')) item.descriptor.push_back(std::stod(cell));
    if (item.descriptor.empty()) throw Error(fmt::format("{}:{}: empty descriptor", path.string(), lineno));
    if (dim == 0) dim = item.descriptor.size();
    if (item.descriptor.size() != dim) throw Error(fmt::format("{}:{}: descriptor size differs", path.string(), lineno));
    m.items.push_back(std::move(item));
  }
  return m;
}

void RetrievalManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << "# group\tlabel\tdescriptor...\n";
  for (const auto& it : items) {
    out << it.group << '\t' << it.label;
    for (double v : it.descriptor) out << '\t' << fmt::format("{:.17g}", v);
    out << '\n';
  }
}

std::vector<RetrievalCell> retrieval_accuracy(const RetrievalManifest& manifest, const std::vector<int>& topn,
                                              int queries_per_group, Rng& rng) {
  if (queries_per_group < 1) throw std::invalid_argument("retrieval_accuracy: queries_per_group must be positive");
  std::vector<RetrievalCell> cells;
  for (int n : topn) {
    if (n < 1) throw std::invalid_argument("retrieval_accuracy: N must be positive");
    cells.push_back(RetrievalCell{n, 0.0, 0, 0, {}});
  }
  // unit descriptors, so cosine similarity is a dot product
  std::vector<std::vector<double>> unit(manifest.items.size());
  for (size_t i = 0; i < manifest.items.size(); ++i) {
    const auto& d = manifest.items[i].descriptor;
    const double norm = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
    unit[i].resize(d.size());
    for (size_t c = 0; c < d.size(); ++c) unit[i][c] = d[c] / std::max(norm, kCosineEps);
  }
  for (const auto& [group, members] : manifest.groups()) {
    const auto size = static_cast<int64_t>(members.size());
    for (auto& cell : cells) {
      if (size < cell.n + 1) cell.skipped_groups.push_back(group);
    }
    if (size < 2) continue;
    for (int q = 0; q < queries_per_group; ++q) {
      const size_t query = members[uniform_int(rng, 0, size - 1)];
      std::vector<std::pair<double, size_t>> ranked;
      for (size_t other : members) {
        if (other == query) continue;
        ranked.emplace_back(std::inner_product(unit[query].begin(), unit[query].end(), unit[other].begin(), 0.0),
                            other);
      }
      std::sort(ranked.begin(), ranked.end(),
                [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      for (auto& cell : cells) {
        if (size < cell.n + 1) continue;
        for (int r = 0; r < cell.n; ++r) {
          cell.matches += manifest.items[ranked[r].second].label == manifest.items[query].label;
        }
        cell.retrieved += cell.n;
      }
    }
  }
  for (auto& cell : cells) {
    cell.accuracy = cell.retrieved ? static_cast<double>(cell.matches) / static_cast<double>(cell.retrieved) : 0.0;
  }
  return cells;
}

double retrieval_chance_level(const RetrievalManifest& manifest, int n) {
  std::vector<double> per_group;
  for (const auto& [group, members] : manifest.groups()) {
    if (static_cast<int64_t>(members.size()) < n + 1) continue;
    std::map<std::string, int64_t> counts;
    for (size_t i : members) ++counts[manifest.items[i].label];
    std::vector<double> per_query;
    for (size_t i : members) {
      per_query.push_back(static_cast<double>(counts[manifest.items[i].label] - 1) /
                          static_cast<double>(members.size() - 1));
    }
    per_group.push_back(mean_of(per_query));
  }
  return mean_of(per_group);
}

// --- keypoint probe -------------------------------------------------------------

namespace {

std::pair<torch::Tensor, torch::Tensor> stack_pairs(const std::vector<ProbePair>& pairs) {
  std::vector<torch::Tensor> x, y;
  for (const auto& p : pairs) {
    x.push_back(p.features.detach().to(torch::kFloat64).reshape({-1}));
    y.push_back(p.landmarks.detach().to(torch::kFloat64).reshape({-1}));
  }
  return {torch::stack(x), torch::stack(y)};
}

struct ProbeErrors {
  double mean = 0.0;
  int64_t skipped = 0;
};

ProbeErrors probe_errors(const torch::Tensor& predicted, const std::vector<ProbePair>& pairs,
                         std::pair<int64_t, int64_t> eyes) {
  std::vector<double> terms;
  ProbeErrors out;
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto truth = pairs[i].landmarks.detach().to(torch::kFloat64).reshape({-1, 2});
    auto d = normalized_landmark_distance(predicted[static_cast<int64_t>(i)].reshape({-1, 2}), truth, eyes);
    if (d) {
      terms.push_back(*d);
    } else {
      ++out.skipped;
    }
  }
  out.mean = mean_of(terms);
  return out;
}

}  // namespace

ProbeResult keypoint_probe(const std::vector<ProbePair>& train, const std::vector<ProbePair>& test,
                           const ProbeConfig& config) {
  if (train.size() < static_cast<size_t>(kMinProbePairs)) {
    throw std::invalid_argument(fmt::format("keypoint_probe: {} training pairs, at least {} required", train.size(),
                                            kMinProbePairs));
  }
  if (test.empty()) throw std::invalid_argument("keypoint_probe: no test pairs");
  auto [x, y] = stack_pairs(train);
  auto [xt, yt] = stack_pairs(test);
  if (xt.size(1) != x.size(1) || yt.size(1) != y.size(1)) throw ShapeError("keypoint_probe: inconsistent dimensions");

  auto x_mean = x.mean(0), x_std = x.std(0, false).clamp_min(1e-8);
  auto y_mean = y.mean(0), y_std = y.std(0, false);
  // constant outputs train against zero and are predicted as their mean
  const auto varying = y_std > 1e-12;
  auto y_train_scale = torch::where(varying, y_std, torch::ones_like(y_std));
  auto y_out_scale = torch::where(varying, y_std, torch::zeros_like(y_std));
  auto xn = (x - x_mean) / x_std;
  auto yn = (y - y_mean) / y_train_scale;

  torch::manual_seed(config.seed);
  torch::nn::Sequential mlp(torch::nn::Linear(x.size(1), config.hidden), torch::nn::ReLU(),
                            torch::nn::Linear(config.hidden, y.size(1)));
  mlp->to(torch::kFloat64);
  torch::optim::Adam opt(mlp->parameters(), torch::optim::AdamOptions(config.lr));
  for (int step = 0; step < config.steps; ++step) {
    // cosine decay to zero over the run
    const double lr = 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * step / config.steps));
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    opt.zero_grad();
    auto loss = torch::mse_loss(mlp->forward(xn), yn);
    loss.backward();
    opt.step();
  }
  torch::NoGradGuard no_grad;
  auto predict = [&](const torch::Tensor& features) { return mlp->forward((features - x_mean) / x_std) * y_out_scale + y_mean; };
  ProbeResult r;
  r.train_error = probe_errors(predict(x), train, config.eye_indices).mean;
  auto test_err = probe_errors(predict(xt), test, config.eye_indices);
  r.test_error = test_err.mean;
  r.skipped = test_err.skipped;
  return r;
}

// --- interpolation --------------------------------------------------------------

torch::Tensor interpolate_pose(const torch::Tensor& y1, const torch::Tensor& y2, double t) {
  if (y1.sizes() != y2.sizes()) throw ShapeError("interpolate_pose: embeddings differ in shape");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate_pose: t outside [0, 1]");
  auto a = y1.detach().to(torch::kFloat64);
  auto b = y2.detach().to(torch::kFloat64);
  const double na = a.norm().item<double>(), nb = b.norm().item<double>();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("interpolate_pose: zero pose vector");
  if (t == 0.0) return y1.detach().clone();
  if (t == 1.0) return y2.detach().clone();
  const double cos_w = std::clamp((a * b).sum().item<double>() / (na * nb), -1.0, 1.0);
  const double w = std::acos(cos_w);
  torch::Tensor out;
  if (w < kSlerpMinAngle || std::numbers::pi - w < kSlerpMinAngle) {
    out = (1.0 - t) * a + t * b;
  } else {
    out = (std::sin((1.0 - t) * w) / std::sin(w)) * a + (std::sin(t * w) / std::sin(w)) * b;
  }
  return out.to(y1.scalar_type());
}

}  // namespace lpr
