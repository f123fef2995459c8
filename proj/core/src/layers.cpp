#include "lpr/layers.hpp"

#include <tuple>

#include "lpr/common.hpp"

namespace lpr {
namespace {

torch::Tensor normalized(const torch::Tensor& v) { return v / (v.norm() + 1e-12); }

torch::Tensor init_u(int64_t rows) { return normalized(torch::randn({rows})); }

}  // namespace

torch::Tensor spectral_normalize(const torch::Tensor& weight, torch::Tensor& u, bool update_u) {
  const auto mat = weight.reshape({weight.size(0), -1});
  torch::Tensor uu, vv;
  {
    // Exact top singular pair from the smaller Gram matrix. Power iteration
    // stalls when many singular values sit close to the top one.
    torch::NoGradGuard no_grad;
    const auto m = mat.detach().to(torch::kFloat64);
    if (m.size(0) <= m.size(1)) {
      uu = std::get<1>(torch::linalg_eigh(torch::mm(m, m.t()))).select(1, -1);
      vv = normalized(torch::mv(m.t(), uu));
    } else {
      vv = std::get<1>(torch::linalg_eigh(torch::mm(m.t(), m))).select(1, -1);
      uu = normalized(torch::mv(m, vv));
    }
    // keep the sign continuous with the stored vector
    if (torch::dot(uu, u.to(torch::kFloat64)).item<double>() < 0.0) {
      uu = -uu;
      vv = -vv;
    }
    uu = uu.to(mat.scalar_type());
    vv = vv.to(mat.scalar_type());
    if (update_u) u.copy_(uu);
  }
  auto sigma = torch::dot(uu, torch::mv(mat, vv));
  // an all-zero weight stays zero
  return weight / sigma.clamp_min(1e-12);
}

double top_singular_value(const torch::Tensor& matrix, int iterations) {
  torch::NoGradGuard no_grad;
  auto m = matrix.detach().to(torch::kFloat64).reshape({matrix.size(0), -1});
  auto v = torch::ones({m.size(1)}, torch::kFloat64);
  v = v / v.norm();
  double sigma = 0.0;
  for (int i = 0; i < iterations; ++i) {
    auto wv = torch::mv(m, v);
    auto w = torch::mv(m.t(), wv);
    const double n = w.norm().item<double>();
    if (n == 0.0) return 0.0;
    v = w / n;
    sigma = torch::mv(m, v).norm().item<double>();
  }
  return sigma;
}

SNLinearImpl::SNLinearImpl(int64_t in, int64_t out, bool with_bias) {
  weight = register_parameter("weight", torch::empty({out, in}));
  torch::nn::init::xavier_uniform_(weight);
  if (with_bias) bias = register_parameter("bias", torch::zeros({out}));
  u = register_buffer("u", init_u(out));
}

torch::Tensor SNLinearImpl::forward(const torch::Tensor& x) {
  return torch::nn::functional::linear(x, spectral_normalize(weight, u, is_training()), bias);
}

torch::Tensor SNLinearImpl::effective_weight_matrix() const {
  torch::NoGradGuard no_grad;
  auto u_copy = u.clone();
  return spectral_normalize(weight, u_copy, false).reshape({weight.size(0), -1});
}

SNConv2dImpl::SNConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride_, int64_t padding_)
    : stride(stride_), padding(padding_) {
  weight = register_parameter("weight", torch::empty({out, in, kernel, kernel}));
  torch::nn::init::xavier_uniform_(weight);
  bias = register_parameter("bias", torch::zeros({out}));
  u = register_buffer("u", init_u(out));
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, spectral_normalize(weight, u, is_training()), bias, stride, padding);
}

torch::Tensor SNConv2dImpl::effective_weight_matrix() const {
  torch::NoGradGuard no_grad;
  auto u_copy = u.clone();
  return spectral_normalize(weight, u_copy, false).reshape({weight.size(0), -1});
}

std::vector<std::pair<std::string, const SpectralNormed*>> spectral_layers(const torch::nn::Module& root,
                                                                           const std::string& prefix) {
  std::vector<std::pair<std::string, const SpectralNormed*>> out;
  for (const auto& item : root.named_modules(prefix)) {
    if (auto* sn = dynamic_cast<const SpectralNormed*>(item.value().get())) out.emplace_back(item.key(), sn);
  }
  return out;
}

torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& mean, const torch::Tensor& std,
                    double eps) {
  const bool batched = features.dim() == 4;
  if (!batched && features.dim() != 3) throw ShapeError("adain: features must be CxHxW or NxCxHxW");
  const auto channels = features.size(batched ? 1 : 0);
  if (mean.size(-1) != channels || std.size(-1) != channels) {
    throw ShapeError("adain: mean/std channel count " + std::to_string(mean.size(-1)) + " does not match " +
                     std::to_string(channels));
  }
  auto mu = features.mean({-2, -1}, true);
  auto var = features.var({-2, -1}, /*unbiased=*/false, /*keepdim=*/true);
  auto normed = (features - mu) / torch::sqrt(var + eps);
  return normed * std.unsqueeze(-1).unsqueeze(-1) + mean.unsqueeze(-1).unsqueeze(-1);
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace lpr
