#include "lpr/app.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "lpr/image_io.hpp"
#include "lpr/logging.hpp"

namespace fs = std::filesystem;

namespace lpr {
namespace {

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw Error(fmt::format("{} {} is not a directory", what, dir.string()));
}

void require_file(const fs::path& file, const char* what) {
  if (!fs::is_regular_file(file)) throw Error(fmt::format("{} {} not found", what, file.string()));
}

}  // namespace

// --- frames ---------------------------------------------------------------------

torch::Tensor load_frame_file(const fs::path& file, int resolution) {
  auto raw = load_rgb(file);
  const CropBox full{0, 0, static_cast<int>(raw.size(2)), static_cast<int>(raw.size(1))};
  return crop_frame(raw, full, resolution, -1.0f).image.clamp(-1.0, 1.0);
}

std::vector<torch::Tensor> load_frames(const fs::path& dir, const PreprocessConfig& pre, int limit) {
  require_dir(dir, "frame directory");
  std::vector<torch::Tensor> frames;
  if (fs::is_directory(dir / "frames")) {
    auto manifest = DatasetManifest::scan_video(dir, 1);
    if (!manifest.empty()) {
      const auto& entry = manifest.entries.front();
      for (int p = 0; p < entry.frame_count() && (limit < 0 || p < limit); ++p) {
        frames.push_back(load_frame(entry, p, pre, false).image);
      }
    }
  } else {
    for (const auto& f : png_files(dir)) {
      if (limit >= 0 && static_cast<int>(frames.size()) >= limit) break;
      frames.push_back(load_frame_file(f, pre.resolution));
    }
  }
  if (frames.empty()) throw Error("no frames in " + dir.string());
  return frames;
}

// --- inference ------------------------------------------------------------------

Reenactor::Reenactor(const Checkpoint& checkpoint) : state_(TrainState::from_checkpoint(checkpoint)) {
  state_.nets().train(false);
}

Reenactor Reenactor::load(const fs::path& path) {
  require_file(path, "checkpoint");
  return Reenactor(Checkpoint::load(path));
}

std::optional<torch::Tensor> Reenactor::stored_identity() const {
  if (!state_.person()) return std::nullopt;
  return state_.person()->identity;
}

torch::Tensor Reenactor::identity(const std::vector<torch::Tensor>& frames) {
  if (frames.empty()) throw std::invalid_argument("identity: no frames");
  torch::NoGradGuard no_grad;
  return nets().encode_identity(torch::stack(frames));
}

torch::Tensor Reenactor::pose(const torch::Tensor& frame) {
  torch::NoGradGuard no_grad;
  return nets().encode_pose(frame);
}

GeneratorOutput Reenactor::render(const torch::Tensor& identity, const torch::Tensor& pose) {
  torch::NoGradGuard no_grad;
  return nets().generate(identity, pose);
}

torch::Tensor Reenactor::composite_image(const GeneratorOutput& out) const {
  return composite(out.rgb, out.mask, config().dataset.use_segmentation);
}

CheckpointModel::CheckpointModel(std::shared_ptr<Reenactor> reenactor, torch::Tensor identity)
    : reenactor_(std::move(reenactor)), identity_(std::move(identity)) {}

torch::Tensor CheckpointModel::reenact(const torch::Tensor& driver) {
  return reenactor_->composite_image(reenactor_->render(identity_, reenactor_->pose(driver)));
}

// --- plug-ins -------------------------------------------------------------------

torch::Tensor SyntheticEmbedder::embed(const torch::Tensor& image) {
  static constexpr synthetic::Color kReference{0.6, 0.45, 0.35};
  const auto a = synthetic::analyze(image);
  auto out = torch::zeros({3}, torch::kFloat64);
  if (!a.valid) return out;
  for (int c = 0; c < 3; ++c) out[c] = a.skin[c] - kReference[c];
  return out;
}

torch::Tensor SyntheticDetector::detect(const torch::Tensor& image) {
  const auto a = synthetic::analyze(image);
  auto out = torch::zeros({synthetic::kNumLandmarks, 2}, torch::kFloat64);
  if (!a.valid) return out;
  const auto pts = synthetic::landmarks(a.geometry);
  for (int i = 0; i < synthetic::kNumLandmarks; ++i) {
    out[i][0] = pts[i][0];
    out[i][1] = pts[i][1];
  }
  return out;
}

std::unique_ptr<FaceEmbedder> make_embedder(const std::string& name) {
  if (name == "synthetic") return std::make_unique<SyntheticEmbedder>();
  throw ConfigError("unknown embedder '" + name + "' (available: synthetic)");
}

std::unique_ptr<LandmarkDetector> make_detector(const std::string& name) {
  if (name == "synthetic") return std::make_unique<SyntheticDetector>();
  throw ConfigError("unknown detector '" + name + "' (available: synthetic)");
}

// --- commands ---------------------------------------------------------------------

ReenactResult run_reenact(const fs::path& ckpt, const fs::path& identity_dir, const fs::path& driver_dir,
                          const fs::path& out_dir) {
  auto r = Reenactor::load(ckpt);
  const auto pre = r.config().preprocess();
  const auto identity_frames = load_frames(identity_dir, pre);
  const auto drivers = load_frames(driver_dir, pre);
  const auto identity = r.identity(identity_frames);
  fs::create_directories(out_dir);
  ReenactResult result;
  for (size_t i = 0; i < drivers.size(); ++i) {
    auto out = r.render(identity, r.pose(drivers[i]));
    const auto stem = out_dir / fmt::format("{:05d}", i);
    const fs::path rgb = stem.string() + "_rgb.png", mask = stem.string() + "_mask.png",
                   comp = stem.string() + "_composite.png";
    save_rgb(rgb, out.rgb);
    save_mask(mask, out.mask);
    save_rgb(comp, composite(out.rgb, out.mask, true));
    result.files.insert(result.files.end(), {rgb, mask, comp});
  }
  return result;
}

std::vector<fs::path> run_interpolate(const fs::path& ckpt, const fs::path& identity_dir, const fs::path& frame_a,
                                      const fs::path& frame_b, int steps, const fs::path& out_dir) {
  if (steps < 2) throw std::invalid_argument("interpolate: steps must be at least 2");
  require_file(frame_a, "pose frame");
  require_file(frame_b, "pose frame");
  auto r = Reenactor::load(ckpt);
  const auto pre = r.config().preprocess();
  const auto identity = r.identity(load_frames(identity_dir, pre));
  const auto ya = r.pose(load_frame_file(frame_a, pre.resolution));
  const auto yb = r.pose(load_frame_file(frame_b, pre.resolution));
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / (steps - 1);
    auto out = r.render(identity, interpolate_pose(ya, yb, t));
    files.push_back(out_dir / fmt::format("{:05d}_composite.png", s));
    save_rgb(files.back(), composite(out.rgb, out.mask, true));
  }
  return files;
}

ReenactmentReport run_eval_reenactment(const fs::path& ckpt_dir, const fs::path& data_root,
                                       const std::string& embedder_name, const std::string& detector_name) {
  auto embedder = make_embedder(embedder_name);
  auto detector = make_detector(detector_name);
  require_dir(ckpt_dir, "checkpoint directory");
  require_dir(data_root, "data root");
  std::vector<fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(ckpt_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ckpt") ckpts.push_back(e.path());
  }
  std::sort(ckpts.begin(), ckpts.end());
  std::vector<ReenactmentSubject> subjects;
  for (const auto& ckpt : ckpts) {
    const auto person_dir = data_root / ckpt.stem();
    if (!fs::is_directory(person_dir)) {
      logging::warn(fmt::format("eval-reenactment: no data for {}, skipped", ckpt.stem().string()));
      continue;
    }
    auto reenactor = std::make_shared<Reenactor>(Checkpoint::load(ckpt));
    const auto pre = reenactor->config().preprocess();
    fs::path video_dir = person_dir;
    if (!fs::is_directory(video_dir / "frames")) {
      std::vector<fs::path> videos;
      for (const auto& e : fs::directory_iterator(person_dir)) {
        if (fs::is_directory(e.path() / "frames")) videos.push_back(e.path());
      }
      if (videos.empty()) throw Error("no video under " + person_dir.string());
      std::sort(videos.begin(), videos.end());
      video_dir = videos.front();
    }
    auto frames = load_frames(video_dir, pre, kEvalReferenceFrames + kEvalHoldoutFrames);
    if (static_cast<int>(frames.size()) <= kEvalReferenceFrames) {
      throw Error(fmt::format("{} needs more than {} frames for a hold-out set", video_dir.string(),
                              kEvalReferenceFrames));
    }
    ReenactmentSubject s;
    s.reference_frames.assign(frames.begin(), frames.begin() + kEvalReferenceFrames);
    s.holdout_frames.assign(frames.begin() + kEvalReferenceFrames, frames.end());
    auto identity = reenactor->stored_identity().value_or(reenactor->identity(s.reference_frames));
    s.model = std::make_shared<CheckpointModel>(reenactor, identity);
    subjects.push_back(std::move(s));
  }
  if (subjects.size() < 2) throw Error("eval-reenactment: at least two fine-tuned models are required");
  ReenactmentReport report;
  report.subjects = static_cast<int>(subjects.size());
  report.identity_error = identity_error(subjects, *embedder);
  report.pose = pose_error(subjects, *detector);
  return report;
}

void write_reenactment_report(std::ostream& out, const ReenactmentReport& r) {
  out << "identity_error\tpose_error\tpose_evaluated\tpose_skipped\tmodels\n";
  out << fmt::format("{:.9g}\t{:.9g}\t{}\t{}\t{}\n", r.identity_error, r.pose.value, r.pose.evaluated, r.pose.skipped,
                     r.subjects);
}

std::vector<RetrievalCell> run_eval_retrieval(const fs::path& manifest, const std::vector<int>& topn, int queries,
                                              uint64_t seed) {
  require_file(manifest, "retrieval manifest");
  Rng rng(seed);
  return retrieval_accuracy(RetrievalManifest::load(manifest), topn, queries, rng);
}

void write_retrieval_report(std::ostream& out, const std::vector<RetrievalCell>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) out << (i ? "\t" : "") << "retrieval_top" << cells[i].n;
  out << '\n';
  for (size_t i = 0; i < cells.size(); ++i) out << (i ? "\t" : "") << fmt::format("{:.6f}", cells[i].accuracy);
  out << '\n';
  for (const auto& c : cells) {
    for (const auto& g : c.skipped_groups) {
      logging::warn(fmt::format("retrieval_top{}: group '{}' too small, skipped", c.n, g));
    }
  }
}

std::vector<ProbeFileRow> read_probe_pairs(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read pairs file " + file.string());
  std::vector<ProbeFileRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ProbeFileRow row;
    std::string image;
    if (!std::getline(ss, row.split, '\t') || !std::getline(ss, image, '\t')) {
      throw Error("malformed pairs row: " + line);
    }
    if (row.split != "train" && row.split != "test") throw Error("pairs split must be train or test: " + line);
    row.image = fs::path(image).is_absolute() ? fs::path(image) : file.parent_path() / image;
    std::string cell;
    while (std::getline(ss, cell, '\t')) row.landmarks.push_back(std::stod(cell));
    if (row.landmarks.empty() || row.landmarks.size() % 2) throw Error("pairs row needs 2P coordinates: " + line);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_probe_pairs(const fs::path& file, const std::vector<ProbeFileRow>& rows) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write pairs file " + file.string());
  out << "# split\timage\tlandmarks (x y, normalised)...\n";
  for (const auto& r : rows) {
    out << r.split << '\t' << r.image.string();
    for (double v : r.landmarks) out << '\t' << fmt::format("{:.17g}", v);
    out << '\n';
  }
}

void write_synthetic_probe_pairs(const fs::path& data_root, const PreprocessConfig& pre, const fs::path& file,
                                 int test_every) {
  auto manifest = DatasetManifest::scan(data_root, 1);
  if (manifest.empty()) throw Error("no videos under " + data_root.string());
  std::vector<ProbeFileRow> rows;
  int counter = 0;
  for (const auto& entry : manifest.entries) {
    const auto truth = synthetic::read_pose_tsv(entry.dir / "pose.tsv");
    for (const auto& t : truth) {
      auto it = entry.boxes.find(t.frame);
      if (it == entry.boxes.end()) continue;
      const auto crop = grow_crop_box(it->second, pre.crop_growth);
      ProbeFileRow row;
      row.split = (++counter % test_every == 0) ? "test" : "train";
      row.image = fs::absolute(frame_path(entry.dir, t.frame));
      for (const auto& p : synthetic::landmarks(t.geometry)) {
        row.landmarks.push_back((p[0] - crop.x0) / crop.width());
        row.landmarks.push_back((p[1] - crop.y0) / crop.height());
      }
      rows.push_back(std::move(row));
    }
  }
  write_probe_pairs(file, rows);
}

ProbeResult run_probe_keypoints(const fs::path& ckpt, const fs::path& pairs) {
  auto r = Reenactor::load(ckpt);
  const auto& cfg = r.config();
  const auto rows = read_probe_pairs(pairs);
  std::vector<ProbePair> train, test;
  for (const auto& row : rows) {
    // Pairs built from a dataset are cropped the same way as training frames.
    torch::Tensor image;
    const auto video_dir = row.image.parent_path().parent_path();
    const auto boxes_file = video_dir / "boxes.tsv";
    if (row.image.parent_path().filename() == "frames" && fs::exists(boxes_file)) {
      const auto boxes = read_boxes(boxes_file);
      const int index = std::stoi(row.image.stem().string());
      auto raw = load_rgb(row.image);
      auto it = boxes.find(index);
      const CropBox box = it != boxes.end()
                              ? grow_crop_box(it->second, cfg.dataset.crop_growth)
                              : CropBox{0, 0, static_cast<int>(raw.size(2)), static_cast<int>(raw.size(1))};
      image = crop_frame(raw, box, cfg.networks.resolution, -1.0f).image.clamp(-1.0, 1.0);
    } else {
      image = load_frame_file(row.image, cfg.networks.resolution);
    }
    ProbePair p;
    p.features = torch::cat({r.pose(image), r.identity({image})}).to(torch::kFloat64);
    p.landmarks = torch::tensor(row.landmarks, torch::kFloat64).reshape({-1, 2});
    (row.split == "train" ? train : test).push_back(std::move(p));
  }
  ProbeConfig pc;
  pc.hidden = cfg.evaluation.probe_hidden;
  pc.steps = cfg.evaluation.probe_steps;
  pc.lr = cfg.evaluation.probe_lr;
  pc.seed = cfg.seed;
  return keypoint_probe(train, test, pc);
}

}  // namespace lpr
