#include "lpr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "lpr/logging.hpp"
#include "lpr/image_io.hpp"

namespace fs = std::filesystem;

namespace lpr {
namespace {

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

std::vector<int> list_frame_indices(const fs::path& dir) {
  std::vector<int> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    const auto stem = e.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    out.push_back(std::stoi(stem));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

VideoEntry scan_video_entry(const fs::path& dir, std::string person, std::string video, int stride) {
  VideoEntry v;
  v.person_id = std::move(person);
  v.video_id = std::move(video);
  v.dir = dir;
  const auto all = list_frame_indices(dir / "frames");
  for (size_t i = 0; i < all.size(); i += static_cast<size_t>(stride)) v.frames.push_back(all[i]);
  if (fs::exists(dir / "boxes.tsv")) v.boxes = read_boxes(dir / "boxes.tsv");
  for (int f : v.frames) v.has_mask.push_back(fs::exists(mask_path(dir, f)));
  return v;
}

}  // namespace

CropBox grow_crop_box(const CropBox& box, double growth) {
  if (box.width() <= 0 || box.height() <= 0) {
    throw std::invalid_argument(fmt::format("grow_crop_box: degenerate box ({},{},{},{})", box.x0, box.y0,
                                            box.x1, box.y1));
  }
  if (!(growth >= 0.0)) throw std::invalid_argument("grow_crop_box: growth must be >= 0");
  const double cx = 0.5 * (box.x0 + box.x1);
  const double cy = 0.5 * (box.y0 + box.y1);
  const double side = std::max(box.width(), box.height()) * (1.0 + growth);
  const int s = round_half_up(side);
  CropBox out;
  out.x0 = round_half_up(cx - side / 2.0);
  out.y0 = round_half_up(cy - side / 2.0);
  out.x1 = out.x0 + s;
  out.y1 = out.y0 + s;
  return out;
}

torch::Tensor resample_bilinear(const torch::Tensor& image, const AxisMap& mx, const AxisMap& my,
                                int64_t out_w, int64_t out_h, float pad_value) {
  if (image.dim() != 3) throw ShapeError("resample_bilinear: expected CxHxW");
  const auto h = image.size(1);
  const auto w = image.size(2);
  auto coords = [](const AxisMap& m, int64_t n) {
    auto u = torch::arange(n, torch::kFloat64);
    return (m.offset + m.step * u).clamp(m.lo, m.hi);
  };
  auto sx = coords(mx, out_w);
  auto sy = coords(my, out_h);
  // One pixel of padding on every side; indices are clamped onto it.
  auto padded = torch::constant_pad_nd(image, {1, 1, 1, 1}, pad_value);
  auto fx = sx.floor();
  auto fy = sy.floor();
  auto wx = (sx - fx).to(image.scalar_type());
  auto wy = (sy - fy).to(image.scalar_type());
  auto ix0 = (fx + 1).clamp(0, w + 1).to(torch::kLong);
  auto ix1 = (fx + 2).clamp(0, w + 1).to(torch::kLong);
  auto iy0 = (fy + 1).clamp(0, h + 1).to(torch::kLong);
  auto iy1 = (fy + 2).clamp(0, h + 1).to(torch::kLong);
  auto rows0 = padded.index_select(1, iy0);
  auto rows1 = padded.index_select(1, iy1);
  auto wxv = wx.view({1, 1, -1});
  auto wyv = wy.view({1, -1, 1});
  auto top = rows0.index_select(2, ix0) * (1 - wxv) + rows0.index_select(2, ix1) * wxv;
  auto bot = rows1.index_select(2, ix0) * (1 - wxv) + rows1.index_select(2, ix1) * wxv;
  return (top * (1 - wyv) + bot * wyv).contiguous();
}

CropResult crop_frame(const torch::Tensor& image, const CropBox& box, int out_resolution, float pad_value) {
  if (out_resolution < 8 || out_resolution % 4 != 0) {
    throw std::invalid_argument("crop_frame: out_resolution must be >= 8 and a multiple of 4");
  }
  if (box.width() <= 0 || box.height() <= 0) throw std::invalid_argument("crop_frame: degenerate box");
  if (image.dim() != 3) throw ShapeError("crop_frame: expected CxHxW image");
  const auto h = image.size(1);
  const auto w = image.size(2);
  CropResult result;
  if (box.x1 <= 0 || box.y1 <= 0 || box.x0 >= w || box.y0 >= h) {
    logging::warn(fmt::format("crop_frame: box ({},{},{},{}) lies entirely outside a {}x{} image", box.x0, box.y0, box.x1,
                 box.y1, w, h));
    result.image = torch::full({image.size(0), out_resolution, out_resolution}, pad_value, image.options());
    result.fully_outside = true;
    return result;
  }
  const double step_x = static_cast<double>(box.width()) / out_resolution;
  const double step_y = static_cast<double>(box.height()) / out_resolution;
  AxisMap mx{box.x0 + 0.5 * step_x - 0.5, step_x, static_cast<double>(box.x0), box.x1 - 1.0};
  AxisMap my{box.y0 + 0.5 * step_y - 0.5, step_y, static_cast<double>(box.y0), box.y1 - 1.0};
  result.image = resample_bilinear(image, mx, my, out_resolution, out_resolution, pad_value);
  return result;
}

fs::path frame_path(const fs::path& video_dir, int index) {
  return video_dir / "frames" / fmt::format("{:05d}.png", index);
}

fs::path mask_path(const fs::path& video_dir, int index) {
  return video_dir / "masks" / fmt::format("{:05d}.png", index);
}

std::map<int, CropBox> read_boxes(const fs::path& tsv) {
  std::ifstream in(tsv);
  if (!in) throw Error("cannot open " + tsv.string());
  std::map<int, CropBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int f;
    CropBox b;
    if (!(ls >> f >> b.x0 >> b.y0 >> b.x1 >> b.y1)) {
      throw Error(fmt::format("{}:{}: expected frame_index x0 y0 x1 y1", tsv.string(), lineno));
    }
    boxes[f] = b;
  }
  return boxes;
}

void write_boxes(const fs::path& tsv, const std::map<int, CropBox>& boxes) {
  std::ofstream out(tsv);
  for (const auto& [f, b] : boxes) out << f << '\t' << b.x0 << '\t' << b.y0 << '\t' << b.x1 << '\t' << b.y1 << '\n';
}

DatasetManifest DatasetManifest::scan(const fs::path& root, int stride) {
  if (stride < 1) throw ConfigError("dataset.frame_stride must be >= 1");
  if (!fs::is_directory(root)) throw Error("dataset root is not a directory: " + root.string());
  DatasetManifest m;
  m.root = root;
  m.stride = stride;
  for (const auto& person : sorted_subdirs(root)) {
    for (const auto& video : sorted_subdirs(person)) {
      if (!fs::is_directory(video / "frames")) continue;
      auto entry = scan_video_entry(video, person.filename().string(), video.filename().string(), stride);
      if (entry.frames.empty()) continue;
      m.entries.push_back(std::move(entry));
    }
  }
  return m;
}

DatasetManifest DatasetManifest::scan_video(const fs::path& video_dir, int stride) {
  if (!fs::is_directory(video_dir / "frames")) throw Error("not a video directory: " + video_dir.string());
  DatasetManifest m;
  m.root = video_dir.parent_path();
  m.stride = stride;
  const auto abs = fs::absolute(video_dir).lexically_normal();
  auto entry = scan_video_entry(video_dir, abs.parent_path().filename().string(), abs.filename().string(), stride);
  if (!entry.frames.empty()) m.entries.push_back(std::move(entry));
  return m;
}

FrameRecord load_frame(const VideoEntry& video, int position, const PreprocessConfig& pre, bool want_mask) {
  const int index = video.frames.at(static_cast<size_t>(position));
  FrameRecord rec;
  rec.person_id = video.person_id;
  rec.video_id = video.video_id;
  rec.frame_index = index;
  auto raw = load_rgb(frame_path(video.dir, index));
  CropBox box{0, 0, static_cast<int>(raw.size(2)), static_cast<int>(raw.size(1))};
  bool grow = false;
  if (auto it = video.boxes.find(index); it != video.boxes.end()) {
    box = it->second;
    grow = true;
  }
  const CropBox crop = grow ? grow_crop_box(box, pre.crop_growth) : box;
  rec.image = crop_frame(raw, crop, pre.resolution, -1.0f).image.clamp(-1.0, 1.0);
  if (want_mask && video.has_mask.at(static_cast<size_t>(position))) {
    auto m = load_mask(mask_path(video.dir, index));
    rec.mask = crop_frame(m, crop, pre.resolution, 0.0f).image.clamp(0.0, 1.0);
  }
  return rec;
}

FrameStore::FrameStore(DatasetManifest manifest, PreprocessConfig pre, bool load_masks)
    : manifest_(std::move(manifest)), pre_(pre) {
  if (manifest_.empty()) throw Error("dataset manifest is empty");
  frames_.reserve(manifest_.entries.size());
  for (const auto& v : manifest_.entries) {
    std::vector<FrameRecord> records;
    records.reserve(v.frames.size());
    for (int p = 0; p < v.frame_count(); ++p) records.push_back(load_frame(v, p, pre_, load_masks));
    frames_.push_back(std::move(records));
  }
}

const FrameRecord& FrameStore::frame(int video, int position) const {
  return frames_.at(static_cast<size_t>(video)).at(static_cast<size_t>(position));
}

std::vector<int> draw_frame_positions(int n, int count, Rng& rng) {
  if (n < 1 || count < 1) throw std::invalid_argument("draw_frame_positions: n and count must be >= 1");
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  const int distinct = std::min(n, count);
  for (int i = 0; i < distinct; ++i) {
    const auto j = uniform_int(rng, i, n - 1);
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  std::vector<int> out(perm.begin(), perm.begin() + distinct);
  // Too few frames: the pose frame stays distinct, identity frames repeat.
  while (static_cast<int>(out.size()) < count) out.insert(out.begin(), static_cast<int>(uniform_int(rng, 0, n - 1)));
  return out;
}

Episode sample_episode(const FrameStore& store, const SamplerConfig& config, Rng& rng) {
  if (config.k < 1) throw ConfigError("dataset.k must be >= 1");
  const auto& manifest = store.manifest();
  for (int attempt = 0; attempt <= config.max_resample; ++attempt) {
    const int v = static_cast<int>(uniform_int(rng, 0, store.num_videos() - 1));
    const auto& entry = manifest.entries[static_cast<size_t>(v)];
    auto positions = draw_frame_positions(entry.frame_count(), config.k + 1, rng);
    const int pose_pos = positions.back();
    const auto& pose = store.frame(v, pose_pos);
    if (config.use_segmentation && !pose.mask) {
      logging::warn(fmt::format("sample_episode: {}/{} frame {} has no mask; resampling", entry.person_id, entry.video_id,
                   pose.frame_index));
      continue;
    }
    Episode ep;
    ep.video_index = v;
    ep.person_id = entry.person_id;
    ep.video_id = entry.video_id;
    std::vector<torch::Tensor> ids;
    for (int i = 0; i < config.k; ++i) {
      const auto& f = store.frame(v, positions[static_cast<size_t>(i)]);
      ids.push_back(f.image);
      ep.frame_indices.push_back(f.frame_index);
    }
    ep.frame_indices.push_back(pose.frame_index);
    ep.identity_frames = torch::stack(ids);
    ep.pose_frame_raw = pose.image;
    ep.pose_frame_augmented = pose_augment(pose.image, config.augment, rng);
    ep.pose_mask = (config.use_segmentation && pose.mask)
                       ? *pose.mask
                       : torch::ones({1, pose.image.size(1), pose.image.size(2)}, pose.image.options());
    return ep;
  }
  throw Error("sample_episode: no frame with a mask found after resampling");
}

EpisodeBatch stack_episodes(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("stack_episodes: empty batch");
  std::vector<torch::Tensor> ids, raw, aug, mask;
  std::vector<int64_t> vids;
  for (const auto& e : episodes) {
    ids.push_back(e.identity_frames);
    raw.push_back(e.pose_frame_raw);
    aug.push_back(e.pose_frame_augmented);
    mask.push_back(e.pose_mask);
    vids.push_back(e.video_index);
  }
  EpisodeBatch b;
  b.identity_frames = torch::stack(ids);
  b.pose_raw = torch::stack(raw);
  b.pose_augmented = torch::stack(aug);
  b.pose_mask = torch::stack(mask);
  b.video_index = torch::tensor(vids, torch::kLong);
  return b;
}

EpisodePrefetcher::EpisodePrefetcher(const FrameStore& store, SamplerConfig config, Rng seeds, int capacity,
                                     int workers)
    : store_(store), config_(std::move(config)), seeds_(seeds), capacity_(std::max(1, capacity)) {
  for (int i = 0; i < workers; ++i) {
    threads_.emplace_back([this](std::stop_token st) { work(st); });
  }
}

EpisodePrefetcher::~EpisodePrefetcher() {
  for (auto& t : threads_) t.request_stop();
  space_.notify_all();
  threads_.clear();
}

void EpisodePrefetcher::work(std::stop_token stop) {
  while (!stop.stop_requested()) {
    uint64_t idx;
    uint64_t seed;
    {
      std::unique_lock lock(mu_);
      if (!space_.wait(lock, stop, [&] { return next_claim_ < next_out_ + static_cast<uint64_t>(capacity_); })) {
        return;
      }
      idx = next_claim_++;
      seed = seeds_();
    }
    try {
      Rng rng(seed);
      auto ep = sample_episode(store_, config_, rng);
      std::lock_guard lock(mu_);
      done_.emplace(idx, std::move(ep));
    } catch (...) {
      std::lock_guard lock(mu_);
      error_ = std::current_exception();
    }
    ready_.notify_all();
  }
}

Episode EpisodePrefetcher::next() {
  if (threads_.empty()) {
    Rng rng(seeds_());
    ++next_out_;
    return sample_episode(store_, config_, rng);
  }
  std::unique_lock lock(mu_);
  ready_.wait(lock, [&] { return error_ || done_.count(next_out_) > 0; });
  if (error_) std::rethrow_exception(error_);
  auto node = done_.extract(next_out_);
  ++next_out_;
  lock.unlock();
  space_.notify_all();
  return std::move(node.mapped());
}

}  // namespace lpr
