#include "s3d/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "s3d/error.hpp"
#include "s3d/model_io.hpp"

namespace s3d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct WindowRef {
  std::size_t video = 0;
  long long start = 0;
};

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x54524e31u};
  return std::mt19937_64(seq);
}

std::vector<Video> load_split(const fs::path& root, const DatasetManifest& manifest, const std::string& split) {
  std::vector<Video> out;
  auto names = manifest.class_names;
  for (const auto& e : manifest.split(split)) out.push_back(load_video(root, e, names));
  return out;
}

// Settings that may change between a checkpoint and its resumption are left
// out: the epoch budget, checkpoint cadence and thread count.
std::string checkpoint_hash(RunConfig config) {
  config.train.epochs = 0;
  config.train.checkpoint_every = 0;
  config.threads = 0;
  return config.hash();
}

struct CheckpointState {
  int epochs_completed = 0;
  long long steps = 0;
};

CheckpointState load_checkpoint(const fs::path& dir, const RunConfig& config, Network& net, OptimizerState& opt) {
  std::ifstream in(dir / "state.json");
  if (!in) throw LoadError("checkpoint " + dir.string() + " has no state.json");
  json state;
  try {
    state = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError("checkpoint state.json: " + std::string(e.what()));
  }
  if (state.value("config_hash", std::string()) != checkpoint_hash(config)) {
    throw LoadError("checkpoint " + dir.string() + " was written with a different configuration");
  }
  net = load_model(dir / "model.s3d");
  if (net.config().to_json() != config.network.to_json()) {
    throw LoadError("checkpoint model does not match the configured network");
  }
  opt.velocity = load_params(net.config(), dir / "velocity.s3d");
  CheckpointState cs{state.at("epochs_completed").get<int>(), state.at("steps").get<long long>()};
  opt.steps = cs.steps;
  return cs;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Network& net, const OptimizerState& state, int epochs_completed,
                     const RunConfig& config) {
  fs::create_directories(dir);
  save_model(net, dir / "model.s3d");
  save_params(net.config(), state.velocity, dir / "velocity.s3d");
  std::ofstream out(dir / "state.json");
  out << json{{"epochs_completed", epochs_completed}, {"steps", state.steps}, {"config_hash", checkpoint_hash(config)}}.dump(2)
      << "\n";
}

void write_loss_csv(const fs::path& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "step,loc,conf,act,total\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.step << "," << r.loss.loc << "," << r.loss.conf << "," << r.loss.act << "," << r.loss.total << "\n";
  }
}

TrainOutcome train_model(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const auto manifest = DatasetManifest::load(options.data_dir);
  if (static_cast<int>(manifest.class_names.size()) != config.network.num_classes) {
    throw ConfigError("dataset has " + std::to_string(manifest.class_names.size()) + " classes, network expects " +
                      std::to_string(config.network.num_classes));
  }
  const auto videos = load_split(options.data_dir, manifest, "train");
  if (videos.empty()) throw InputError("dataset has no training videos");
  const double fps = manifest.spec.fps;
  const double noise = manifest.spec.noise_amplitude;
  const long long window = config.network.input.length;
  const int k = config.network.num_classes;

  TrainOutcome out{Network::initialized(config.network, config.seed), OptimizerState::zeros_like(config.network), {}, 0};
  if (!options.resume_from.empty()) {
    out.epochs_completed = load_checkpoint(options.resume_from, config, out.net, out.optimizer).epochs_completed;
  }

  auto record = [&](int epoch, const LossReport& loss) {
    TrainLogRow row{out.optimizer.steps, epoch, loss};
    out.log.push_back(row);
    if (options.on_step) options.on_step(row);
  };

  std::vector<WindowRef> windows;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (long long s : window_offsets(videos[v].frames.dim(0), window, config.train.stride_frames)) {
      windows.push_back({v, s});
    }
  }

  if (config.train.overfit_one_window) {
    std::optional<TrainExample> chosen;
    for (const auto& w : windows) {
      const auto& vid = videos[w.video];
      auto tw = make_window(vid.frames, vid.annotation.annotations, w.start, window, fps, noise);
      auto match = match_spans(out.net.grid(), tw.annotations, k);
      if (match.positive_count() > 0) {
        chosen = TrainExample{std::move(tw.frames), std::move(match)};
        break;
      }
    }
    if (!chosen) throw InputError("overfit mode: no training window has a positive default span");
    const std::vector<TrainExample> batch{*chosen};
    for (int s = 0; s < config.train.overfit_steps; ++s) {
      record(0, train_step(out.net, batch, out.optimizer, options.threads));
    }
    return out;
  }

  const JitterSettings jitter_settings =
      config.train.jitter ? JitterSettings::standard(config.train.stride_frames) : JitterSettings{};
  for (int epoch = out.epochs_completed; epoch < config.train.epochs; ++epoch) {
    auto rng = epoch_rng(config.seed, epoch);
    OptimizerSettings settings = config.network.optimizer;
    if (config.train.lr_decay_epoch > 0 && epoch >= config.train.lr_decay_epoch) {
      settings.learning_rate *= config.train.lr_decay_factor;
    }
    std::vector<WindowRef> order = windows;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.train.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.train.batch_size));
      std::vector<TrainExample> batch;
      batch.reserve(end - b);
      for (std::size_t i = b; i < end; ++i) {
        const auto& vid = videos[order[i].video];
        auto tw = make_window(vid.frames, vid.annotation.annotations, order[i].start, window, fps, noise);
        if (config.train.jitter) {
          tw = jitter(tw, vid.frames, vid.annotation.annotations, jitter_settings, rng, noise);
        }
        auto match = match_spans(out.net.grid(), tw.annotations, k);
        batch.push_back({std::move(tw.frames), std::move(match)});
      }
      record(epoch, train_step(out.net, batch, out.optimizer, settings, options.threads));
    }
    out.epochs_completed = epoch + 1;
    if (!options.checkpoint_dir.empty() && config.train.checkpoint_every > 0 &&
        out.epochs_completed % config.train.checkpoint_every == 0) {
      save_checkpoint(options.checkpoint_dir, out.net, out.optimizer, out.epochs_completed, config);
    }
  }
  return out;
}

std::vector<VideoAnnotation> load_split_annotations(const fs::path& data_dir, const std::string& split,
                                                    std::vector<std::string>& class_names) {
  const auto manifest = DatasetManifest::load(data_dir);
  if (class_names.empty()) class_names = manifest.class_names;
  std::vector<VideoAnnotation> out;
  for (const auto& e : manifest.split(split)) {
    std::ifstream in(data_dir / e.annotation_path);
    if (!in) throw LoadError("cannot open " + (data_dir / e.annotation_path).string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& err) {
      throw LoadError(e.annotation_path + ": " + err.what());
    }
    auto anns = annotations_from_json(j, class_names, false);
    out.insert(out.end(), anns.begin(), anns.end());
  }
  return out;
}

std::vector<VideoDetections> detect_dataset(const Network& net, const fs::path& data_dir, const std::string& split,
                                            const InferenceSettings& settings, long long stride_frames, int threads) {
  const auto manifest = DatasetManifest::load(data_dir);
  if (static_cast<int>(manifest.class_names.size()) != net.config().num_classes) {
    throw ConfigError("model predicts " + std::to_string(net.config().num_classes) + " classes, dataset has " +
                      std::to_string(manifest.class_names.size()));
  }
  InferenceSettings s = settings;
  s.pad_noise = manifest.spec.noise_amplitude;
  std::vector<VideoDetections> out;
  for (const auto& e : manifest.split(split)) {
    const TensorD frames = load_video_tensor(data_dir / e.video_path);
    out.push_back({e.video_id, detect_video(net, frames, manifest.spec.fps, s, stride_frames, threads)});
  }
  return out;
}

}  // namespace s3d
