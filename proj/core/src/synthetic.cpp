#include "lpr/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "lpr/image_io.hpp"

namespace fs = std::filesystem;

namespace lpr::synthetic {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kGradientAmplitude = 0.12;
constexpr double kMinIdentitySeparation = 0.15;

struct Local {
  double u, v;
};

Local to_local(const HeadGeometry& g, double x, double y) {
  const double t = g.pose.angle_deg * kDeg;
  const double dx = x - g.cx, dy = y - g.cy;
  return {std::cos(t) * dx + std::sin(t) * dy, -std::sin(t) * dx + std::cos(t) * dy};
}

std::array<double, 2> to_image(const HeadGeometry& g, double u, double v) {
  const double t = g.pose.angle_deg * kDeg;
  return {g.cx + std::cos(t) * u - std::sin(t) * v, g.cy + std::sin(t) * u + std::cos(t) * v};
}

double mouth_semi_y(const HeadGeometry& g) { return (kMouthBase + kMouthRange * g.pose.mouth_open) * g.semi_y; }

bool in_ellipse(double u, double v, double cu, double cv, double su, double sv) {
  const double a = (u - cu) / su, b = (v - cv) / sv;
  return a * a + b * b <= 1.0;
}

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace

HeadIdentity random_identity(Rng& rng, int raw_size) {
  HeadIdentity id;
  const double r = uniform(rng, 0.65, 0.95);
  const double g = uniform(rng, 0.35, std::min(r - 0.1, 0.75));
  const double b = uniform(rng, 0.15, std::min(g, 0.6));
  id.skin = {r, g, b};
  id.semi_x = raw_size * uniform(rng, 0.16, 0.2);
  id.semi_y = id.semi_x * uniform(rng, 1.2, 1.35);
  const double bb = uniform(rng, 0.6, 0.9);
  id.background = {uniform(rng, 0.05, bb - 0.35), uniform(rng, 0.1, 0.7), bb};
  return id;
}

HeadPose random_pose(Rng& rng) {
  HeadPose p;
  p.angle_deg = uniform(rng, -kMaxAngleDeg, kMaxAngleDeg);
  p.eye_open = uniform(rng, kMinEyeOpen, 1.0);
  p.mouth_open = uniform(rng, 0.0, 1.0);
  return p;
}

Rendered render(const HeadIdentity& identity, const HeadGeometry& g, int raw_size, std::array<double, 2> gradient) {
  const int n = raw_size;
  std::vector<float> rgb(3 * static_cast<size_t>(n) * n);
  std::vector<float> mask(static_cast<size_t>(n) * n);
  const double eye_sy = kEyeSemiY * g.semi_y * g.pose.eye_open;
  const double mouth_sy = mouth_semi_y(g);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const auto [u, v] = to_local(g, px, py);
      Color c;
      bool head = in_ellipse(u, v, 0, 0, g.semi_x, g.semi_y);
      if (head) {
        c = identity.skin;
        if (in_ellipse(u, v, -kEyeOffsetX * g.semi_x, kEyeOffsetY * g.semi_y, kEyeSemiX * g.semi_x, eye_sy) ||
            in_ellipse(u, v, kEyeOffsetX * g.semi_x, kEyeOffsetY * g.semi_y, kEyeSemiX * g.semi_x, eye_sy)) {
          c = kEyeColor;
        } else if (in_ellipse(u, v, 0, kMouthOffsetY * g.semi_y, kMouthSemiX * g.semi_x, mouth_sy)) {
          c = kMouthColor;
        }
      } else {
        const double shade = gradient[0] * (2.0 * px / n - 1.0) + gradient[1] * (2.0 * py / n - 1.0);
        for (int ch = 0; ch < 3; ++ch) c[ch] = std::clamp(identity.background[ch] + shade, 0.0, 1.0);
      }
      const size_t at = static_cast<size_t>(y) * n + x;
      for (int ch = 0; ch < 3; ++ch) rgb[ch * n * n + at] = static_cast<float>(c[ch]);
      mask[at] = head ? 1.0f : 0.0f;
    }
  }
  Rendered out;
  out.rgb = torch::from_blob(rgb.data(), {3, n, n}, torch::kFloat32).clone();
  out.mask = torch::from_blob(mask.data(), {1, n, n}, torch::kFloat32).clone();
  out.box = {static_cast<int>(std::floor(g.cx - g.semi_x)), static_cast<int>(std::floor(g.cy - g.semi_y)),
             static_cast<int>(std::ceil(g.cx + g.semi_x)), static_cast<int>(std::ceil(g.cy + g.semi_y))};
  return out;
}

std::vector<std::array<double, 2>> landmarks(const HeadGeometry& g) {
  const double ex = kEyeOffsetX * g.semi_x, ey = kEyeOffsetY * g.semi_y;
  const double eye_top = ey - kEyeSemiY * g.semi_y * g.pose.eye_open;
  const double my = kMouthOffsetY * g.semi_y, mh = mouth_semi_y(g);
  return {to_image(g, -ex, ey),      to_image(g, ex, ey),      to_image(g, -ex, eye_top), to_image(g, ex, eye_top),
          to_image(g, 0.0, my - mh), to_image(g, 0.0, my + mh), to_image(g, 0.0, -g.semi_y)};
}

HeadGeometry geometry_from_landmarks(const std::vector<std::array<double, 2>>& p) {
  if (p.size() != kNumLandmarks) throw std::invalid_argument("geometry_from_landmarks: expected 7 points");
  HeadGeometry g;
  const double dx = p[1][0] - p[0][0], dy = p[1][1] - p[0][1];
  const double theta = std::atan2(dy, dx);
  g.pose.angle_deg = theta / kDeg;
  g.semi_x = std::hypot(dx, dy) / (2.0 * kEyeOffsetX);
  const std::array<double, 2> mid{(p[0][0] + p[1][0]) / 2, (p[0][1] + p[1][1]) / 2};
  g.semi_y = dist(p[6], mid) / (1.0 + kEyeOffsetY);
  // centre = mid - R(theta) (0, kEyeOffsetY * semi_y)
  const double off = kEyeOffsetY * g.semi_y;
  g.cx = mid[0] + std::sin(theta) * off;
  g.cy = mid[1] - std::cos(theta) * off;
  g.pose.eye_open = (dist(p[2], p[0]) + dist(p[3], p[1])) / (2.0 * kEyeSemiY * g.semi_y);
  const double mh = dist(p[5], p[4]) / 2.0;
  g.pose.mouth_open = (mh / g.semi_y - kMouthBase) / kMouthRange;
  return g;
}

PixelClass classify(const Color& c) {
  const double mx = std::max({c[0], c[1], c[2]});
  if (c[2] > c[0] + 0.05 || mx < 0.12) return PixelClass::background;
  if (std::min({c[0], c[1], c[2]}) > 0.72) return PixelClass::eye;
  if (c[0] - c[1] > 0.2 && c[1] < 0.25) return PixelClass::mouth;
  return PixelClass::skin;
}

Analysis analyze(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("analyze: expected a 3xHxW image");
  auto img = ((image.detach().to(torch::kFloat64).cpu() + 1.0) * 0.5).contiguous();
  auto a = img.accessor<double, 3>();
  const int64_t h = img.size(1), w = img.size(2);
  double n_head = 0, n_eye = 0, n_mouth = 0, n_skin = 0;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  Color skin{0, 0, 0};
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const Color c{a[0][y][x], a[1][y][x], a[2][y][x]};
      const auto cls = classify(c);
      if (cls == PixelClass::background) continue;
      const double px = x + 0.5, py = y + 0.5;
      n_head += 1;
      sx += px, sy += py, sxx += px * px, syy += py * py, sxy += px * py;
      if (cls == PixelClass::eye) n_eye += 1;
      if (cls == PixelClass::mouth) n_mouth += 1;
      if (cls == PixelClass::skin) {
        n_skin += 1;
        for (int ch = 0; ch < 3; ++ch) skin[ch] += c[ch];
      }
    }
  }
  Analysis out;
  out.head_fraction = n_head / static_cast<double>(h * w);
  if (n_head < 16 || n_skin < 1) return out;
  out.valid = true;
  for (auto& v : skin) v /= n_skin;
  out.skin = skin;
  auto& g = out.geometry;
  g.cx = sx / n_head;
  g.cy = sy / n_head;
  const double cxx = sxx / n_head - g.cx * g.cx, cyy = syy / n_head - g.cy * g.cy;
  const double cxy = sxy / n_head - g.cx * g.cy;
  const double tr = cxx + cyy, det = cxx * cyy - cxy * cxy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
  const double lmax = tr / 2 + disc, lmin = std::max(0.0, tr / 2 - disc);
  const double phi = 0.5 * std::atan2(2 * cxy, cxx - cyy) / kDeg;  // major axis, (-90, 90]
  g.pose.angle_deg = phi > 0 ? phi - 90.0 : phi + 90.0;
  // a uniform ellipse has variance semi_axis^2 / 4 along each axis
  g.semi_x = 2.0 * std::sqrt(lmin);
  g.semi_y = 2.0 * std::sqrt(lmax);
  g.pose.eye_open = (n_eye / n_head) / (2.0 * kEyeSemiX * kEyeSemiY);
  g.pose.mouth_open = ((n_mouth / n_head) / kMouthSemiX - kMouthBase) / kMouthRange;
  return out;
}

double pose_distance(const HeadPose& a, const HeadPose& b) {
  const double da = (a.angle_deg - b.angle_deg) / (2.0 * kMaxAngleDeg);
  const double de = (a.eye_open - b.eye_open) / (1.0 - kMinEyeOpen);
  const double dm = a.mouth_open - b.mouth_open;
  return std::sqrt(da * da + de * de + dm * dm);
}

double color_distance(const Color& a, const Color& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

void write_pose_tsv(const fs::path& tsv, const std::vector<FrameTruth>& rows) {
  std::ofstream out(tsv);
  if (!out) throw Error("cannot write " + tsv.string());
  out << "frame\tangle_deg\teye_open\tmouth_open\tcx\tcy\tsemi_x\tsemi_y\n";
  for (const auto& r : rows) {
    const auto& g = r.geometry;
    out << fmt::format("{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\n", r.frame, g.pose.angle_deg,
                       g.pose.eye_open, g.pose.mouth_open, g.cx, g.cy, g.semi_x, g.semi_y);
  }
}

std::vector<FrameTruth> read_pose_tsv(const fs::path& tsv) {
  std::ifstream in(tsv);
  if (!in) throw Error("cannot read " + tsv.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<FrameTruth> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    FrameTruth r;
    auto& g = r.geometry;
    if (!(ss >> r.frame >> g.pose.angle_deg >> g.pose.eye_open >> g.pose.mouth_open >> g.cx >> g.cy >> g.semi_x >>
          g.semi_y)) {
      throw Error("malformed row in " + tsv.string() + ": " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

void write_identity_tsv(const fs::path& tsv, const HeadIdentity& id) {
  std::ofstream out(tsv);
  if (!out) throw Error("cannot write " + tsv.string());
  out << "skin_r\tskin_g\tskin_b\tsemi_x\tsemi_y\tbackground_r\tbackground_g\tbackground_b\n";
  out << fmt::format("{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\n", id.skin[0], id.skin[1],
                     id.skin[2], id.semi_x, id.semi_y, id.background[0], id.background[1], id.background[2]);
}

HeadIdentity read_identity_tsv(const fs::path& tsv) {
  std::ifstream in(tsv);
  if (!in) throw Error("cannot read " + tsv.string());
  std::string line;
  std::getline(in, line);
  HeadIdentity id;
  if (!(in >> id.skin[0] >> id.skin[1] >> id.skin[2] >> id.semi_x >> id.semi_y >> id.background[0] >>
        id.background[1] >> id.background[2])) {
    throw Error("malformed " + tsv.string());
  }
  return id;
}

void make_dataset(const fs::path& root, const DatasetOptions& o) {
  if (o.identities < 2) throw std::invalid_argument("make_dataset: at least 2 identities are required");
  if (o.frames_per_video < 1 || o.videos_per_identity < 1) {
    throw std::invalid_argument("make_dataset: need at least one video and one frame");
  }
  if (o.raw_size < 32) throw std::invalid_argument("make_dataset: raw frame size below 32");
  if (fs::exists(root) && !fs::is_empty(root) && !o.force) {
    throw Error(root.string() + " exists and is not empty (use --force to overwrite)");
  }
  Rng rng(mix_seed(o.seed, 0x5e7));
  std::vector<HeadIdentity> people;
  for (int i = 0; i < o.identities; ++i) {
    HeadIdentity id;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      id = random_identity(rng, o.raw_size);
      bool separated = true;
      for (const auto& other : people) separated &= color_distance(other.skin, id.skin) >= kMinIdentitySeparation;
      if (separated) break;
    }
    people.push_back(id);
  }
  for (int i = 0; i < o.identities; ++i) {
    for (int v = 0; v < o.videos_per_identity; ++v) {
      auto id = people[i];
      const auto fresh = random_identity(rng, o.raw_size);
      id.background = fresh.background;
      const auto dir = root / fmt::format("id{:03d}", i) / fmt::format("vid{:02d}", v);
      fs::create_directories(dir / "frames");
      fs::create_directories(dir / "masks");
      std::map<int, CropBox> boxes;
      std::vector<FrameTruth> truth;
      for (int f = 0; f < o.frames_per_video; ++f) {
        HeadGeometry g;
        g.semi_x = id.semi_x;
        g.semi_y = id.semi_y;
        g.cx = o.raw_size / 2.0 + uniform(rng, -4.0, 4.0);
        g.cy = o.raw_size / 2.0 + uniform(rng, -4.0, 4.0);
        g.pose = random_pose(rng);
        const double dir_angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        auto r = render(id, g, o.raw_size,
                        {kGradientAmplitude * std::cos(dir_angle), kGradientAmplitude * std::sin(dir_angle)});
        save_rgb(frame_path(dir, f), r.rgb * 2.0 - 1.0);
        save_mask(mask_path(dir, f), r.mask);
        boxes[f] = r.box;
        truth.push_back({f, g});
      }
      write_boxes(dir / "boxes.tsv", boxes);
      write_pose_tsv(dir / "pose.tsv", truth);
      write_identity_tsv(dir / "identity.tsv", id);
    }
  }
}

}  // namespace lpr::synthetic
