#include "s3d/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "s3d/error.hpp"
#include "s3d/parallel.hpp"

namespace s3d {

using nlohmann::json;

void RunConfig::validate() const {
  network.validate();
  synthetic.validate();
  eval.validate();
  if (network.num_classes != synthetic.num_classes) {
    throw ConfigError("network.num_classes (" + std::to_string(network.num_classes) +
                      ") differs from synthetic.num_classes (" + std::to_string(synthetic.num_classes) + ")");
  }
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.stride_frames < 1) throw ConfigError("train.stride_frames must be >= 1");
  if (train.lr_decay_epoch < 0) throw ConfigError("train.lr_decay_epoch must be >= 0");
  if (!(train.lr_decay_factor > 0.0 && train.lr_decay_factor <= 1.0)) {
    throw ConfigError("train.lr_decay_factor must be in (0, 1]");
  }
  if (train.overfit_steps < 0) throw ConfigError("train.overfit_steps must be >= 0");
  if (!(inference.nms_threshold >= 0.0 && inference.nms_threshold <= 1.0)) {
    throw ConfigError("inference.nms_threshold must be in [0, 1]");
  }
  if (!std::isfinite(inference.score_threshold)) throw ConfigError("inference.score_threshold must be finite");
  if (inference_stride_frames < 0) throw ConfigError("inference.stride_frames must be >= 0");
}

json RunConfig::to_json() const {
  json net = network.to_json();
  return {{"seed", seed},
          {"threads", threads},
          {"network", net},
          {"synthetic", synthetic.to_json()},
          {"train",
           {{"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"stride_frames", train.stride_frames},
            {"jitter", train.jitter},
            {"lr_decay_epoch", train.lr_decay_epoch},
            {"lr_decay_factor", train.lr_decay_factor},
            {"checkpoint_every", train.checkpoint_every},
            {"overfit_one_window", train.overfit_one_window},
            {"overfit_steps", train.overfit_steps}}},
          {"inference",
           {{"score_threshold", inference.score_threshold},
            {"nms_threshold", inference.nms_threshold},
            {"stride_frames", inference_stride_frames}}},
          {"eval", {{"iou_thresholds", eval.iou_thresholds}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("synthetic")) c.synthetic = SyntheticSpec::from_json(j["synthetic"]);
    c.network = NetworkConfig::tiny(c.synthetic.num_classes);
    if (j.contains("network")) {
      const auto& n = j["network"];
      if (n.contains("layers")) {
        c.network = NetworkConfig::from_json(n);
      } else {
        const std::string preset = n.value("preset", std::string("s3d-tiny"));
        const int k = n.value("num_classes", c.synthetic.num_classes);
        if (preset == "s3d-tiny") {
          c.network = NetworkConfig::tiny(k);
        } else if (preset == "s3d") {
          c.network = NetworkConfig::full_scale(k);
        } else {
          throw ConfigError("unknown network preset '" + preset + "'");
        }
        if (n.contains("layer_lengths")) c.network.spans.layer_lengths = n["layer_lengths"].get<std::vector<int>>();
        if (n.contains("ratios")) c.network.spans.ratios = n["ratios"].get<std::vector<double>>();
        if (n.contains("loss")) {
          c.network.loss.alpha = n["loss"].value("alpha", c.network.loss.alpha);
          c.network.loss.beta = n["loss"].value("beta", c.network.loss.beta);
        }
        if (n.contains("optimizer")) {
          c.network.optimizer.learning_rate = n["optimizer"].value("learning_rate", c.network.optimizer.learning_rate);
          c.network.optimizer.momentum = n["optimizer"].value("momentum", c.network.optimizer.momentum);
        }
      }
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.stride_frames = t.value("stride_frames", c.train.stride_frames);
      c.train.jitter = t.value("jitter", c.train.jitter);
      c.train.lr_decay_epoch = t.value("lr_decay_epoch", c.train.lr_decay_epoch);
      c.train.lr_decay_factor = t.value("lr_decay_factor", c.train.lr_decay_factor);
      c.train.checkpoint_every = t.value("checkpoint_every", c.train.checkpoint_every);
      c.train.overfit_one_window = t.value("overfit_one_window", c.train.overfit_one_window);
      c.train.overfit_steps = t.value("overfit_steps", c.train.overfit_steps);
    }
    if (j.contains("inference")) {
      const auto& i = j["inference"];
      c.inference.score_threshold = i.value("score_threshold", c.inference.score_threshold);
      c.inference.nms_threshold = i.value("nms_threshold", c.inference.nms_threshold);
      c.inference_stride_frames = i.value("stride_frames", c.inference_stride_frames);
    }
    if (j.contains("eval")) c.eval.iou_thresholds = j["eval"].value("iou_thresholds", c.eval.iou_thresholds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string RunConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("S3D_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return resolve_threads(0);
}

}  // namespace s3d
