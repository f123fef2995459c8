// Command-line front end: training, fine-tuning, reenactment and evaluation.
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lpr/app.hpp"
#include "lpr/logging.hpp"

namespace fs = std::filesystem;
using namespace lpr;

namespace {

struct TrainArgs {
  std::string config, data_root, out, resume, pose_encoder;
  bool no_augment = false, no_segmentation = false;
  std::optional<int> pose_dim, resolution, steps, workers;
  std::optional<uint64_t> seed;
};

RunConfig train_config(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.no_augment) cfg.augment.enabled = false;
  if (a.no_segmentation) cfg.dataset.use_segmentation = false;
  if (a.pose_dim) cfg.networks.pose_dim = *a.pose_dim;
  if (!a.pose_encoder.empty()) cfg.networks.pose_encoder_preset = a.pose_encoder;
  if (a.resolution) cfg.networks.resolution = *a.resolution;
  if (a.steps) cfg.trainer.steps = *a.steps;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  return cfg;
}

std::vector<int> parse_topn(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
  if (out.empty()) throw ConfigError("--topn: expected a comma separated list");
  return out;
}

void write_or_print(const std::string& out, const std::function<void(std::ostream&)>& write) {
  if (out.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error("cannot write " + out);
  write(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot head reenactment: training, fine-tuning and evaluation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug|info|warn|error|off");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "meta-learn on a video dataset");
  train_cmd->add_option("--config", ta.config, "JSON config file");
  train_cmd->add_option("--data-root", ta.data_root, "dataset root")->required();
  train_cmd->add_option("--out", ta.out, "run directory")->required();
  train_cmd->add_option("--resume", ta.resume, "checkpoint to resume from");
  train_cmd->add_flag("--no-augment", ta.no_augment, "disable pose augmentation");
  train_cmd->add_flag("--no-segmentation", ta.no_segmentation, "train without masks");
  train_cmd->add_option("--pose-dim", ta.pose_dim, "pose embedding size");
  train_cmd->add_option("--pose-encoder", ta.pose_encoder, "small|large")
      ->check(CLI::IsMember({"small", "large"}));
  train_cmd->add_option("--resolution", ta.resolution, "training resolution");
  train_cmd->add_option("--steps", ta.steps, "total optimisation steps");
  train_cmd->add_option("--seed", ta.seed, "global seed");
  train_cmd->add_option("--workers", ta.workers, "prefetch threads (default: LPR_NUM_WORKERS or 1)");

  std::string ft_ckpt, ft_person, ft_out;
  int ft_steps = 600;
  std::optional<int> ft_frames;
  auto* ft_cmd = app.add_subcommand("finetune", "person-specific fine-tuning");
  ft_cmd->add_option("--ckpt", ft_ckpt, "meta-learned checkpoint")->required();
  ft_cmd->add_option("--person-dir", ft_person, "person or video directory")->required();
  ft_cmd->add_option("--steps", ft_steps, "fine-tuning steps")->capture_default_str();
  ft_cmd->add_option("--frames", ft_frames, "number of frames to use (at most 32)");
  ft_cmd->add_option("--out", ft_out, "output checkpoint")->required();

  std::string re_ckpt, re_identity, re_driver, re_out;
  auto* re_cmd = app.add_subcommand("reenact", "render a person in the poses of driver frames");
  re_cmd->add_option("--ckpt", re_ckpt)->required();
  re_cmd->add_option("--identity-dir", re_identity)->required();
  re_cmd->add_option("--driver-dir", re_driver)->required();
  re_cmd->add_option("--out", re_out)->required();

  std::string in_ckpt, in_identity, in_a, in_b, in_out;
  int in_steps = 18;
  auto* in_cmd = app.add_subcommand("interpolate", "slerp between the poses of two frames");
  in_cmd->add_option("--ckpt", in_ckpt)->required();
  in_cmd->add_option("--identity-dir", in_identity)->required();
  in_cmd->add_option("--frame-a", in_a)->required();
  in_cmd->add_option("--frame-b", in_b)->required();
  in_cmd->add_option("--steps", in_steps)->capture_default_str();
  in_cmd->add_option("--out", in_out)->required();

  std::string er_dir, er_root, er_embedder = "synthetic", er_detector = "synthetic", er_out;
  auto* er_cmd = app.add_subcommand("eval-reenactment", "identity and pose error of fine-tuned models");
  er_cmd->add_option("--ckpt-dir", er_dir)->required();
  er_cmd->add_option("--data-root", er_root)->required();
  er_cmd->add_option("--embedder", er_embedder)->capture_default_str();
  er_cmd->add_option("--detector", er_detector)->capture_default_str();
  er_cmd->add_option("--out", er_out, "report file (default: stdout)");

  std::string rv_manifest, rv_topn = "10,20,50,100", rv_out;
  int rv_queries = 100;
  uint64_t rv_seed = 0;
  auto* rv_cmd = app.add_subcommand("eval-retrieval", "grouped top-N retrieval accuracy");
  rv_cmd->add_option("--manifest", rv_manifest)->required();
  rv_cmd->add_option("--topn", rv_topn)->capture_default_str();
  rv_cmd->add_option("--queries", rv_queries)->capture_default_str();
  rv_cmd->add_option("--seed", rv_seed)->capture_default_str();
  rv_cmd->add_option("--out", rv_out);

  std::string pk_ckpt, pk_pairs, pk_out;
  auto* pk_cmd = app.add_subcommand("probe-keypoints", "landmark regression probe on embeddings");
  pk_cmd->add_option("--ckpt", pk_ckpt)->required();
  pk_cmd->add_option("--pairs", pk_pairs)->required();
  pk_cmd->add_option("--out", pk_out);

  synthetic::DatasetOptions so;
  std::string ms_out, ms_pairs;
  auto* ms_cmd = app.add_subcommand("make-synthetic", "render the procedural head dataset");
  ms_cmd->add_option("--out", ms_out)->required();
  ms_cmd->add_option("--identities", so.identities)->capture_default_str();
  ms_cmd->add_option("--videos", so.videos_per_identity)->capture_default_str();
  ms_cmd->add_option("--frames", so.frames_per_video)->capture_default_str();
  ms_cmd->add_option("--raw-size", so.raw_size)->capture_default_str();
  ms_cmd->add_option("--seed", so.seed)->capture_default_str();
  ms_cmd->add_flag("--force", so.force, "overwrite a nonempty output directory");
  ms_cmd->add_option("--probe-pairs", ms_pairs, "also write a keypoint-probe pairs file");
  std::optional<int> ms_resolution;
  ms_cmd->add_option("--resolution", ms_resolution, "crop resolution for --probe-pairs");

  CLI11_PARSE(app, argc, argv);

  try {
    logging::set_level(logging::parse_level(log_level));
    if (*train_cmd) {
      const auto cfg = train_config(ta);
      TrainOptions opt;
      opt.data_root = ta.data_root;
      opt.run_dir = ta.out;
      if (!ta.resume.empty()) opt.resume = ta.resume;
      opt.workers = ta.workers.value_or(num_workers(1));
      train(cfg, opt);
    } else if (*ft_cmd) {
      auto ckpt = Checkpoint::load(ft_ckpt);
      const auto cfg = RunConfig::from_json(nlohmann::json::parse(ckpt.config_json));
      auto spec = load_finetune_frames(ft_person, cfg, ft_frames.value_or(cfg.trainer.finetune_frames));
      spec.steps = ft_steps;
      spec.on_step = [](int step, const StepReport& r) {
        if (step % 100 == 0) {
          logging::info(fmt::format("finetune step {}: g_total {:.4f} d_total {:.4f}", step, r.generator_side.total,
                                    r.discriminator_side.total));
        }
      };
      finetune(ckpt, spec).save(ft_out);
    } else if (*re_cmd) {
      const auto r = run_reenact(re_ckpt, re_identity, re_driver, re_out);
      logging::info(fmt::format("wrote {} files to {}", r.files.size(), re_out));
    } else if (*in_cmd) {
      run_interpolate(in_ckpt, in_identity, in_a, in_b, in_steps, in_out);
    } else if (*er_cmd) {
      const auto report = run_eval_reenactment(er_dir, er_root, er_embedder, er_detector);
      write_or_print(er_out, [&](std::ostream& o) { write_reenactment_report(o, report); });
    } else if (*rv_cmd) {
      const auto cells = run_eval_retrieval(rv_manifest, parse_topn(rv_topn), rv_queries, rv_seed);
      write_or_print(rv_out, [&](std::ostream& o) { write_retrieval_report(o, cells); });
    } else if (*pk_cmd) {
      const auto r = run_probe_keypoints(pk_ckpt, pk_pairs);
      write_or_print(pk_out, [&](std::ostream& o) {
        o << "probe_test_error\tprobe_train_error\tskipped\n";
        o << fmt::format("{:.9g}\t{:.9g}\t{}\n", r.test_error, r.train_error, r.skipped);
      });
    } else if (*ms_cmd) {
      synthetic::make_dataset(ms_out, so);
      if (!ms_pairs.empty()) {
        PreprocessConfig pre;
        if (ms_resolution) pre.resolution = *ms_resolution;
        write_synthetic_probe_pairs(ms_out, pre, ms_pairs);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
