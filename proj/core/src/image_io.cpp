#include "lpr/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lpr/common.hpp"

namespace lpr {
namespace {

torch::Tensor mat_to_tensor(const cv::Mat& m) {
  cv::Mat rgb;
  if (m.channels() == 3) {
    cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB);
  } else {
    rgb = m;
  }
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, rgb.channels()}, torch::kUInt8)
               .clone()
               .permute({2, 0, 1})
               .contiguous();
  return t.to(torch::kFloat32) / 255.0;
}

cv::Mat tensor_to_mat(torch::Tensor unit) {
  // unit: CHW in [0, 1]
  auto u8 = (unit.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0)
                .round()
                .to(torch::kUInt8)
                .permute({1, 2, 0})
                .contiguous();
  const int c = static_cast<int>(u8.size(2));
  cv::Mat m(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC(c), u8.data_ptr());
  cv::Mat out;
  if (c == 3) {
    cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
  } else {
    out = m.clone();
  }
  return out;
}

void check_chw(const torch::Tensor& t, int64_t channels, const char* what) {
  if (t.dim() != 3 || t.size(0) != channels) {
    throw ShapeError(std::string(what) + ": expected a CHW tensor with " + std::to_string(channels) +
                     " channels");
  }
}

}  // namespace

torch::Tensor load_rgb(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw Error("cannot read image " + path.string());
  return mat_to_tensor(m) * 2.0 - 1.0;
}

torch::Tensor load_mask(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw Error("cannot read mask " + path.string());
  return mat_to_tensor(m);
}

void save_rgb(const std::filesystem::path& path, const torch::Tensor& rgb) {
  check_chw(rgb, 3, "save_rgb");
  if (!cv::imwrite(path.string(), tensor_to_mat((rgb + 1.0) * 0.5))) {
    throw Error("cannot write image " + path.string());
  }
}

void save_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
  check_chw(mask, 1, "save_mask");
  if (!cv::imwrite(path.string(), tensor_to_mat(mask))) {
    throw Error("cannot write mask " + path.string());
  }
}

torch::Tensor jpeg_roundtrip(const torch::Tensor& rgb, int quality) {
  check_chw(rgb, 3, "jpeg_roundtrip");
  std::vector<uchar> buf;
  cv::imencode(".jpg", tensor_to_mat((rgb + 1.0) * 0.5), buf, {cv::IMWRITE_JPEG_QUALITY, quality});
  cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_COLOR);
  return mat_to_tensor(decoded) * 2.0 - 1.0;
}

}  // namespace lpr
